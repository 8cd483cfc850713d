//! Raw media to encoder inputs: face-crop stacks and log-mel spectrograms.

mod crops;
mod mel;

pub use crops::{
    augment, build_crop_stack, nearest_frame_index, stack_sample_times, AugmentPlan, CropCorner,
    CropStack, Frame, TrackFrames, CROP_RATIO,
};
pub use mel::{
    hz_to_mel, mel_spectrogram, mel_to_hz, AudioSnippet, MelConfig, MelExtractor, MelSpectrogram,
};
