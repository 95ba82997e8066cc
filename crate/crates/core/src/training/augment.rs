use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Triplet, TrainError, TripletFlows};

/// One draw of the augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AugmentFlags {
    pub x0: usize,
    pub y0: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Exchange first and last frame (and the two flows).
    pub swap: bool,
}

/// Generator for sample `index` in `epoch`: each sample has its own stream,
/// so the draw does not depend on which worker produces it.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch << 32) | index);
    rng
}

/// Crops a `crop`-sided square at the flagged origin, then applies the flips
/// and the temporal swap. Flows are transformed along with the frames.
pub fn apply_augment(t: &Triplet, crop: usize, flags: AugmentFlags) -> Result<Triplet, TrainError> {
    if crop == 0 || crop > t.width() || crop > t.height() {
        return Err(TrainError::Config(format!("patch {}x{} is smaller than the {crop} px crop", t.width(), t.height())));
    }
    let mut out = t.crop(flags.x0, flags.y0, crop, crop)?;
    if flags.flip_horizontal {
        out.first = out.first.flip_horizontal();
        out.middle = out.middle.flip_horizontal();
        out.last = out.last.flip_horizontal();
        out.flows = out.flows.map(|f| TripletFlows {
            forward: f.forward.flip_horizontal(),
            backward: f.backward.flip_horizontal(),
        });
    }
    if flags.flip_vertical {
        out.first = out.first.flip_vertical();
        out.middle = out.middle.flip_vertical();
        out.last = out.last.flip_vertical();
        out.flows =
            out.flows.map(|f| TripletFlows { forward: f.forward.flip_vertical(), backward: f.backward.flip_vertical() });
    }
    if flags.swap {
        std::mem::swap(&mut out.first, &mut out.last);
        out.flows = out.flows.map(|f| TripletFlows { forward: f.backward, backward: f.forward });
    }
    Ok(out)
}

/// Random crop origin, independent 50% flips and 50% temporal swap.
pub fn augment(t: &Triplet, crop: usize, rng: &mut impl Rng) -> Result<Triplet, TrainError> {
    if crop == 0 || crop > t.width() || crop > t.height() {
        return Err(TrainError::Config(format!("patch {}x{} is smaller than the {crop} px crop", t.width(), t.height())));
    }
    let flags = AugmentFlags {
        x0: rng.random_range(0..=t.width() - crop),
        y0: rng.random_range(0..=t.height() - crop),
        flip_horizontal: rng.random_bool(0.5),
        flip_vertical: rng.random_bool(0.5),
        swap: rng.random_bool(0.5),
    };
    apply_augment(t, crop, flags)
}
