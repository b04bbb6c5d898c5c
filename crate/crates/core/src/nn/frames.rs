use crate::datagen::{ArgSource, DatasetRecord};
use crate::encoding::{encode_spec_into, EncodeError, SlotInput, ENCODED_LEN};
use crate::tensor::Tensor;

/// Unroll length of the sequence model.
pub const MAX_STEPS: usize = 3;

/// Input slots seen at one step.
pub type Frame<'a> = Vec<SlotInput<'a>>;

/// Step frames of a training record. Step `t` sees the carried value as a
/// masked slot (from the second step on) followed by the fresh inputs it
/// consumes; steps past the end see only the masked slot.
pub fn record_frames(record: &DatasetRecord) -> Vec<Frame<'_>> {
    let mut frames = Vec::with_capacity(MAX_STEPS);
    for (t, step) in record.steps.iter().enumerate() {
        let mut frame = Vec::new();
        if t > 0 {
            frame.push(SlotInput::Masked);
        }
        let mut seen = Vec::new();
        for arg in &step.args {
            if let ArgSource::Input(i) = arg {
                if !seen.contains(i) {
                    seen.push(*i);
                    frame.push(SlotInput::Tensor(&record.inputs[*i]));
                }
            }
        }
        frames.push(frame);
    }
    while frames.len() < MAX_STEPS {
        frames.push(vec![SlotInput::Masked]);
    }
    frames
}

/// Encodes up to `MAX_STEPS` frames against the output, padding missing
/// steps with a masked frame. The result is `MAX_STEPS * ENCODED_LEN` long.
pub fn encode_frames(frames: &[Frame<'_>], output: &Tensor) -> Result<Vec<f32>, EncodeError> {
    let mut out = Vec::with_capacity(MAX_STEPS * ENCODED_LEN);
    for t in 0..MAX_STEPS {
        match frames.get(t) {
            Some(f) => encode_spec_into(f, output, &mut out)?,
            None => encode_spec_into(&[SlotInput::Masked], output, &mut out)?,
        }
    }
    Ok(out)
}
