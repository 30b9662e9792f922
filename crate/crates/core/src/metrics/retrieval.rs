use crate::error::{Error, Result};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Caption-to-image recall@k for row-aligned pairs: the fraction of
/// captions whose own image ranks within the `k` most cosine-similar
/// images. Ties rank the lower image index first.
pub fn retrieval_recall(image_embs: &[Vec<f64>], sent_embs: &[Vec<f64>], k: usize) -> Result<f64> {
    let n = image_embs.len();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if sent_embs.len() != n {
        return Err(Error::shape(n, sent_embs.len()));
    }
    let mut hits = 0usize;
    for (j, sent) in sent_embs.iter().enumerate() {
        let sims: Vec<f64> = image_embs.iter().map(|img| cosine(img, sent)).collect();
        let own = sims[j];
        let rank = sims
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s > own || (s == own && i < j))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}
