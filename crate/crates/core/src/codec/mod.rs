//! The end-to-end codec: configuration, bitstream grammar, encoder, decoders, rate accounting.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod format;
mod records;
pub mod rate;
pub mod wire;

pub use config::{Ablations, CodecConfig, QuantConfig};
pub use decoder::{
    decode_checkpoint, decode_segments_parallel, decode_segments_parallel_with_trace, decode_with_trace, DecodeLimits,
    DecodeTrace, Stream,
};
pub use encoder::{alignment_view, encode_checkpoint, encode_sweep, AlignmentView, ActivationSet, EncodeOutput, EncodeStats, RecordStat, SweepPoint};
pub use format::{keyframe_indicator, parse_header, segment_count, segment_layers, write_header, Header, Plan};
pub use rate::{rate_report, RateBreakdown, COMPONENT_NAMES};
