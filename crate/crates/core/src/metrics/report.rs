use std::io::Write;

use crate::error::{FuseError, Result};
use crate::image::Image;

use super::{
    check_triple, entropy, fmi, mutual_information, q_abf, spatial_frequency, standard_deviation,
    vif_fusion, ms_ssim, FmiFeature,
};

pub const CSV_HEADER: [&str; 10] = [
    "image", "SF", "EN", "Qabf", "FMIw", "MS-SSIM", "FMIpixel", "MI", "SD", "VIF",
];

/// All nine metrics for one (infrared, visible, fused) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub image: String,
    pub sf: f64,
    pub en: f64,
    pub q_abf: f64,
    pub fmi_w: f64,
    pub ms_ssim: f64,
    pub fmi_pixel: f64,
    pub mi: f64,
    pub sd: f64,
    pub vif: f64,
}

impl MetricReport {
    /// Values in column order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.sf,
            self.en,
            self.q_abf,
            self.fmi_w,
            self.ms_ssim,
            self.fmi_pixel,
            self.mi,
            self.sd,
            self.vif,
        ]
    }

    pub fn record(&self) -> Vec<String> {
        std::iter::once(self.image.clone())
            .chain(self.values().iter().map(|v| format!("{v:.6}")))
            .collect()
    }
}

/// `a` is the infrared source, `b` the visible one.
pub fn evaluate_all(name: &str, a: &Image, b: &Image, f: &Image) -> Result<MetricReport> {
    check_triple(a, b, f)?;
    Ok(MetricReport {
        image: name.to_string(),
        sf: spatial_frequency(f)?,
        en: entropy(f),
        q_abf: q_abf(a, b, f)?,
        fmi_w: fmi(a, b, f, FmiFeature::Wavelet)?,
        ms_ssim: ms_ssim(a, b, f)?,
        fmi_pixel: fmi(a, b, f, FmiFeature::Pixel)?,
        mi: mutual_information(a, b, f)?,
        sd: standard_deviation(f),
        vif: vif_fusion(a, b, f)?,
    })
}

/// Header plus one row per report, six decimals.
pub fn write_csv<W: Write>(out: W, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| FuseError::input(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for r in reports {
        w.write_record(r.record()).map_err(to_err)?;
    }
    w.flush().map_err(|e| FuseError::input(format!("csv: {e}")))?;
    Ok(())
}
