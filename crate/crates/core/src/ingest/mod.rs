//! Vintage data ingestion, stationarity transforms and real-time design
//! matrices.

mod design;
mod frame;
mod panel;
mod transform;

pub use design::{
    assemble_design, realized_target, Column, DesignMatrix, DesignOptions, PredictorMode,
    Provenance, RealizationVintage,
};
pub use frame::MonthlyFrame;
pub use panel::{
    parse_panel, read_vintage_csv, write_vintage_csv, SeriesSpec, SpecSource, Vintage,
    VintagePanel,
};
pub use transform::{apply_transform, TransformCode};
