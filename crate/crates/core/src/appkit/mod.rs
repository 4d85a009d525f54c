//! Trace I/O, normalisation, windowing, kinetics and event analysis, and the
//! benchmark driver.

pub mod benchmark;
pub mod events;
pub mod io;
pub mod kinetics;
pub mod normalize;
pub mod window;

pub use benchmark::{
    run_benchmark, BenchTrace, BenchmarkResult, BenchmarkRow, Method, MethodConfig,
};
pub use events::{analyze_nanopore, extract_events, Event, EventReport};
pub use kinetics::{analyze_fret, dwell_times, fit_rate, KineticsReport, RateFit};
pub use normalize::{denormalize, normalize_trace, NormalizationRecord};
pub use window::{denoise_long, window_trace, LongDenoise, WindowPlan};
