pub mod io;
pub mod market_data;
pub mod text_distance;
pub mod news_ingest;
pub mod sentiment_scorer;
pub mod signal_builder;
pub mod panel_regression;
pub mod backtest;
pub mod synthetic;
pub mod cli_reports;

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/headlines.md")]
    mod headlines {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/timing.md")]
    mod timing {}
    #[doc = include_str!("../../../book/src/regression.md")]
    mod regression {}
    #[doc = include_str!("../../../book/src/portfolios.md")]
    mod portfolios {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
