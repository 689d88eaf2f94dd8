//! Feature extraction: transforms, mel/MFCC, spectral statistics, onset and
//! pitch detection.

pub mod features;
pub mod mel;
pub mod onset;
pub mod pitch;
pub mod spectrum;

pub use features::{
    even_odd_ratio, harmonic_amplitudes, spectral_centroid, spectral_flatness, spectral_rolloff,
    summarize, CentroidTrack, FeatureSummary,
};
pub use mel::{mel_spectrogram, mfcc, MelFilterbank, MelSpectrogram};
pub use onset::detect_onsets;
pub use pitch::{detect_pitch, PitchEstimate};
pub use spectrum::{stft, Fft, Spectrogram, Window};
