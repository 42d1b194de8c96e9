//! Out-of-sample hashing with a trained model: `b = sign(U h)` where
//! `h = vec(Q1^T X Q2)` (minus the stored feature mean, if any).

use crate::bilinear::project_features;
use crate::error::{Error, Result};
use crate::types::{BilinearModel, CodeMatrix, FeatureTensor};

pub fn encode(x: &FeatureTensor, model: &BilinearModel) -> Result<CodeMatrix> {
    model.validate()?;
    let (d1, d2) = model.input_dims();
    if x.dims() != (d1, d2) {
        let (qd1, qd2) = x.dims();
        return Err(Error::shape("encode query", format!("{d1}x{d2}"), format!("{qd1}x{qd2}")));
    }
    let mut h = project_features(x, &model.q1, &model.q2)?;
    if let Some(mean) = &model.feature_mean {
        for mut col in h.column_iter_mut() {
            col -= mean;
        }
    }
    CodeMatrix::from_signs(&(&model.u * h))
}
