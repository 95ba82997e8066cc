mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use ctxsyn::codecs::CodecError;
use ctxsyn::context::ContextError;
use ctxsyn::evaluation::EvalError;
use ctxsyn::flow::FlowError;
use ctxsyn::synthesis::ModelError;
use ctxsyn::tensor::TensorError;
use ctxsyn::training::TrainError;
use ctxsyn::warping::WarpError;

use args::Cli;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

/// Flag values that parse but cannot be used.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

/// Inputs that load but are empty, inconsistent or altered.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InvalidData(pub String);

fn codec_code(e: &CodecError) -> u8 {
    match e {
        CodecError::Io { .. } => EXIT_IO,
        _ => EXIT_DATA,
    }
}

fn tensor_code(e: &TensorError) -> u8 {
    match e {
        TensorError::NonFiniteGradient { .. } => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn warp_code(e: &WarpError) -> u8 {
    match e {
        WarpError::BadTime(_) | WarpError::BadTau(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Codec(c) => codec_code(c),
        ModelError::Context(ContextError::Codec(c)) => codec_code(c),
        ModelError::Tensor(t) => tensor_code(t),
        ModelError::Warp(w) => warp_code(w),
        _ => EXIT_DATA,
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Codec(c) => codec_code(c),
        TrainError::Model(m) => model_code(m),
        TrainError::Tensor(t) => tensor_code(t),
        TrainError::Warp(w) => warp_code(w),
        TrainError::Io { .. } => EXIT_IO,
        TrainError::Config(_) => EXIT_USAGE,
        TrainError::NonFiniteLoss { .. } => EXIT_NUMERIC,
        TrainError::Flow(_) | TrainError::EmptyDataset | TrainError::Dataset(_) => EXIT_DATA,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Codec(c) => codec_code(c),
        EvalError::Model(m) => model_code(m),
        EvalError::Warp(w) => warp_code(w),
        EvalError::Io { .. } => EXIT_IO,
        _ => EXIT_DATA,
    }
}

/// Exit status for a failure, from the first recognised error in the chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return EXIT_USAGE;
        }
        if cause.is::<InvalidData>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<CodecError>() {
            return codec_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return eval_code(e);
        }
        if let Some(e) = cause.downcast_ref::<WarpError>() {
            return warp_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TensorError>() {
            return tensor_code(e);
        }
        if cause.is::<FlowError>() || cause.is::<ContextError>() || cause.is::<serde_json::Error>() {
            return EXIT_DATA;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_DATA
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("CTXSYN_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| format!("CTXSYN_THREADS must be a positive integer, got \"{v}\""))?;
    if n == 0 {
        return Err("CTXSYN_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE);
    }
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
