use ndarray::Array2;

use super::{OutputKind, Tdnn};
use crate::autodiff::softmax_rows;
use crate::sigproc::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<usize>,
    /// T x n_labels; rows sum to 1.
    pub posteriors: Array2<f32>,
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(row: ndarray::ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn classify_array(model: &Tdnn<f32>, x: &Array2<f32>) -> Result<Classification> {
    if !matches!(model.config.output, OutputKind::Softmax { .. }) {
        return Err(Error::State("model has no softmax output".into()));
    }
    let logits = model.infer(x)?;
    let posteriors = softmax_rows(&logits);
    let labels = posteriors.rows().into_iter().map(argmax).collect();
    Ok(Classification { labels, posteriors })
}

pub fn classify_frames(features: &FeatureMatrix, model: &Tdnn<f32>) -> Result<Classification> {
    classify_array(model, &features.frames)
}

/// Maps features through an enhancer; output keeps T and kind.
pub fn enhance(features: &FeatureMatrix, model: &Tdnn<f32>) -> Result<FeatureMatrix> {
    let OutputKind::Linear { .. } = model.config.output else {
        return Err(Error::State("model has no linear output".into()));
    };
    let y = model.infer(&features.frames)?;
    let frames = match &model.output_norm {
        Some(n) => n.invert(&y),
        None => y,
    };
    FeatureMatrix::new(frames, features.frame_shift, features.kind, features.source_id.clone())
}

/// Percentage of frames whose label differs from the reference.
pub fn frame_error_rate(hyp: &[usize], reference: &[usize]) -> Result<f64> {
    if hyp.len() != reference.len() {
        return Err(Error::shape(
            "frame_error_rate",
            format!("{} hypotheses, {} references", hyp.len(), reference.len()),
        ));
    }
    if hyp.is_empty() {
        return Err(Error::EmptyInput("no frames to score".into()));
    }
    let wrong = hyp.iter().zip(reference).filter(|(a, b)| a != b).count();
    Ok(100.0 * wrong as f64 / hyp.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Standardizer, TdnnConfig};
    use crate::sigproc::FeatureKind;

    fn feats(t: usize) -> FeatureMatrix {
        let frames = Array2::from_shape_fn((t, 80), |(i, j)| ((i * 13 + j * 7) % 11) as f32 - 5.0);
        FeatureMatrix::new(frames, 0.01, FeatureKind::LogMel, "x").unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_and_label_zero() {
        let mut m = Tdnn::<f32>::new(TdnnConfig::with_hidden(OutputKind::Softmax { n_labels: 5 }, 8), 1).unwrap();
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.value_mut(id).fill(0.0);
        }
        let c = classify_frames(&feats(7), &m).unwrap();
        assert!(c.labels.iter().all(|&l| l == 0));
        assert!(c.posteriors.iter().all(|&p| (p - 0.2).abs() < 1e-7));
    }

    #[test]
    fn enhance_then_classify_any_length() {
        let mut enh = Tdnn::<f32>::new(TdnnConfig::with_hidden(OutputKind::Linear { dim: 80 }, 8), 2).unwrap();
        enh.output_norm = Some(Standardizer::identity(80));
        let am = Tdnn::<f32>::new(TdnnConfig::with_hidden(OutputKind::Softmax { n_labels: 4 }, 8), 3).unwrap();
        for t in [1, 2, 13, 40] {
            let e = enhance(&feats(t), &enh).unwrap();
            assert_eq!(e.frames.dim(), (t, 80));
            let c = classify_frames(&e, &am).unwrap();
            assert_eq!(c.labels.len(), t);
            for row in c.posteriors.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let am = Tdnn::<f32>::new(TdnnConfig::with_hidden(OutputKind::Softmax { n_labels: 4 }, 8), 3).unwrap();
        let f = FeatureMatrix::new(Array2::zeros((3, 16)), 0.01, FeatureKind::Z1Mean, "z").unwrap();
        assert!(matches!(classify_frames(&f, &am), Err(Error::Shape { .. })));
    }

    #[test]
    fn fer_counts_mismatches() {
        assert_eq!(frame_error_rate(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 50.0);
        assert!(frame_error_rate(&[0], &[0, 1]).is_err());
    }
}
