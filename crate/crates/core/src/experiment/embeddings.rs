use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::autodiff::Tensor;
use crate::data::{Dataset, TargetTruth};
use crate::error::{Error, Result};
use crate::losses::pseudo_label;
use crate::models::ModelTriple;

/// Projection of the rows of `x` onto its leading principal components.
/// Components are ordered by decreasing variance and each is signed so
/// its largest-magnitude loading is positive. Missing components (fewer
/// columns than requested) are reported as zeros.
pub fn pca(x: &Tensor, components: usize) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::EmptyBatch("pca input"));
    }
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = m.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; n * components];
    for (c, &k) in order.iter().take(components).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let lead = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v = -v;
        }
        let proj = &centered * v;
        for i in 0..n {
            out[i * components + c] = proj[i];
        }
    }
    Tensor::new(vec![n, components], out)
}

/// Writes generator features of both domains with labels, pseudo-labels and
/// a 2-D PCA fitted on the union. Inputs must already be standardized.
pub fn export_embeddings(
    model: &ModelTriple,
    source: &Dataset,
    target: &Dataset,
    truth: &TargetTruth,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let src_labels = source
        .labels()
        .ok_or_else(|| Error::invalid("source dataset has no labels"))?;
    if truth.len() != target.len() {
        return Err(Error::invalid("target truth length does not match the target dataset"));
    }
    let inputs = Tensor::vstack(&[source.inputs(), target.inputs()])?;
    let feats = model.features(&inputs)?;
    let (p1, p2) = model.probabilities(&inputs)?;
    let pseudo = pseudo_label(&p1, &p2)?;
    let proj = pca(&feats, 2)?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let ns = source.len();
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        let mut header = vec!["domain".to_string(), "true_label".into(), "pseudo_label".into()];
        header.extend((0..feats.cols()).map(|j| format!("feature_{j}")));
        header.extend(["pca_0".to_string(), "pca_1".into()]);
        writeln!(w, "{}", header.join(","))?;
        for i in 0..inputs.rows() {
            let (domain, label) = if i < ns {
                ("source", src_labels[i])
            } else {
                ("target", truth.labels()[i - ns])
            };
            let mut fields = vec![domain.to_string(), label.to_string(), pseudo.labels[i].to_string()];
            fields.extend(feats.row(i).iter().chain(proj.row(i)).map(|v| v.to_string()));
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}
