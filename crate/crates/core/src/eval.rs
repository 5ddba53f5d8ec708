//! Retrieval evaluation: L2 distance matrices, CMC rank-k accuracy and
//! non-interpolated mean average precision. Ties in distance are broken by
//! gallery index. No camera filtering is applied.

use ndarray::{Array2, ArrayView2};

use crate::data::{make_query_gallery_split, DomainDataset, QueryGallerySplit};
use crate::error::{check_dim, Error, Result};
use crate::exec::{self, ExecMode};
use crate::nn::EmbeddingNet;

/// Rank-k accuracies are reported for these k.
pub const RANKS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    pub average_precision: Vec<f64>,
}

/// Embeds every sample of `ds`, preserving row order.
pub fn extract_embeddings(net: &EmbeddingNet, ds: &DomainDataset) -> Result<Array2<f64>> {
    net.embed(ds.features())
}

pub fn l2_distance_matrix(queries: ArrayView2<f64>, gallery: ArrayView2<f64>) -> Result<Array2<f64>> {
    l2_distance_matrix_with(ExecMode::default(), queries, gallery)
}

/// `out[q, g] = ||queries[q] - gallery[g]||_2`, rows computed in parallel
/// under [`ExecMode::Parallel`].
pub fn l2_distance_matrix_with(
    mode: ExecMode,
    queries: ArrayView2<f64>,
    gallery: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_dim("distance feature dimension", queries.ncols(), gallery.ncols())?;
    let rows = exec::map_range(mode, queries.nrows(), |q| {
        let a = queries.row(q);
        gallery
            .rows()
            .into_iter()
            .map(|b| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .collect::<Vec<f64>>()
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((queries.nrows(), gallery.nrows()), flat).expect("row lengths"))
}

fn check_ids<T: PartialEq>(dists: ArrayView2<f64>, query_ids: &[T], gallery_ids: &[T]) -> Result<()> {
    check_dim("query ids", dists.nrows(), query_ids.len())?;
    check_dim("gallery ids", dists.ncols(), gallery_ids.len())?;
    if let Some(q) = query_ids.iter().position(|id| !gallery_ids.contains(id)) {
        return Err(Error::Input(format!("query {q} has no matching identity in the gallery")));
    }
    Ok(())
}

/// Gallery indices of row `q` sorted by ascending distance, ties by index.
fn ranking(dists: ArrayView2<f64>, q: usize) -> Vec<usize> {
    let row = dists.row(q);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    order
}

/// Fraction of queries with a correct match among the `k` nearest gallery
/// items, for each `k` in `ks`.
pub fn cmc<T: PartialEq + Sync>(
    dists: ArrayView2<f64>,
    query_ids: &[T],
    gallery_ids: &[T],
    ks: &[usize],
) -> Result<Vec<f64>> {
    check_ids(dists, query_ids, gallery_ids)?;
    let first_hits: Vec<usize> = exec::map_range(ExecMode::default(), query_ids.len(), |q| {
        ranking(dists, q)
            .iter()
            .position(|&g| gallery_ids[g] == query_ids[q])
            .expect("checked: every query has a match")
    });
    let n = query_ids.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| first_hits.iter().filter(|&&p| p < k).count() as f64 / n)
        .collect())
}

/// Non-interpolated AP of every query: the mean of precision@r over the
/// ranks r at which relevant gallery items appear.
pub fn average_precisions<T: PartialEq + Sync>(
    dists: ArrayView2<f64>,
    query_ids: &[T],
    gallery_ids: &[T],
) -> Result<Vec<f64>> {
    check_ids(dists, query_ids, gallery_ids)?;
    Ok(exec::map_range(ExecMode::default(), query_ids.len(), |q| {
        let mut hits = 0usize;
        let mut sum = 0.0;
        for (pos, &g) in ranking(dists, q).iter().enumerate() {
            if gallery_ids[g] == query_ids[q] {
                hits += 1;
                sum += hits as f64 / (pos + 1) as f64;
            }
        }
        sum / hits as f64
    }))
}

pub fn mean_average_precision<T: PartialEq + Sync>(
    dists: ArrayView2<f64>,
    query_ids: &[T],
    gallery_ids: &[T],
) -> Result<f64> {
    let aps = average_precisions(dists, query_ids, gallery_ids)?;
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn retrieval_metrics<T: PartialEq + Sync>(
    dists: ArrayView2<f64>,
    query_ids: &[T],
    gallery_ids: &[T],
) -> Result<RetrievalResult> {
    let ranks = cmc(dists, query_ids, gallery_ids, &RANKS)?;
    let average_precision = average_precisions(dists, query_ids, gallery_ids)?;
    let map = average_precision.iter().sum::<f64>() / average_precision.len() as f64;
    Ok(RetrievalResult {
        rank1: ranks[0],
        rank5: ranks[1],
        rank10: ranks[2],
        map,
        average_precision,
    })
}

/// Retrieval metrics for precomputed embeddings of every sample in `ds`.
pub fn evaluate_embeddings(
    embeddings: ArrayView2<f64>,
    ds: &DomainDataset,
    split: &QueryGallerySplit,
) -> Result<RetrievalResult> {
    check_dim("embedding rows", ds.len(), embeddings.nrows())?;
    let q = embeddings.select(ndarray::Axis(0), &split.query);
    let g = embeddings.select(ndarray::Axis(0), &split.gallery);
    let dists = l2_distance_matrix(q.view(), g.view())?;
    retrieval_metrics(dists.view(), &ds.labels_at(&split.query), &ds.labels_at(&split.gallery))
}

pub fn evaluate_retrieval(net: &EmbeddingNet, ds: &DomainDataset, split: &QueryGallerySplit) -> Result<RetrievalResult> {
    let emb = extract_embeddings(net, ds)?;
    evaluate_embeddings(emb.view(), ds, split)
}

/// Convenience: split with a seeded stream, then evaluate.
pub fn evaluate_with_seed(net: &EmbeddingNet, ds: &DomainDataset, seed: u64) -> Result<RetrievalResult> {
    let split = make_query_gallery_split(ds, &mut crate::rng::stream(seed, crate::rng::Stream::Evaluation))?;
    evaluate_retrieval(net, ds, &split)
}

/// Fraction of rows whose argmax equals the label; ties go to the lowest
/// class index.
pub fn classification_accuracy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_dim("labels", logits.nrows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Input("accuracy of an empty batch".into()));
    }
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn distance_examples() {
        let d = l2_distance_matrix(array![[1.0, 2.0]].view(), array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(d, array![[0.0]]);
        let d = l2_distance_matrix(array![[0.0, 0.0]].view(), array![[3.0, 4.0]].view()).unwrap();
        assert_eq!(d, array![[5.0]]);
        assert!(l2_distance_matrix(array![[0.0]].view(), array![[3.0, 4.0]].view()).is_err());
    }

    #[test]
    fn cmc_position_logic() {
        // match at sorted position 3 (1-based)
        let d = array![[0.1, 0.2, 0.3, 0.4, 0.5]];
        let r = cmc(d.view(), &[7], &[1, 2, 7, 3, 4], &[1, 5]).unwrap();
        assert_eq!(r, vec![0.0, 1.0]);
    }

    #[test]
    fn ap_worked_example() {
        let d = array![[0.1, 0.2, 0.3, 0.4]];
        let ap = mean_average_precision(d.view(), &[1], &[1, 0, 1, 0]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((ap - 0.833333).abs() < 1e-6);
        let all = mean_average_precision(d.view(), &[1], &[1, 1, 1, 1]).unwrap();
        assert_eq!(all, 1.0);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let d = array![[0.5, 0.5, 0.5]];
        assert_eq!(cmc(d.view(), &[2], &[1, 2, 2], &[1]).unwrap(), vec![0.0]);
        assert_eq!(cmc(d.view(), &[1], &[1, 2, 2], &[1]).unwrap(), vec![1.0]);
    }

    #[test]
    fn missing_match_is_an_error() {
        let d = array![[0.1, 0.2]];
        assert!(cmc(d.view(), &[9], &[1, 2], &[1]).is_err());
        assert!(mean_average_precision(d.view(), &[9], &[1, 2]).is_err());
    }

    #[test]
    fn accuracy_ties_go_to_class_zero() {
        let l = array![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        assert_eq!(classification_accuracy(l.view(), &[0, 0]).unwrap(), 1.0);
        let l = array![[0.1, 0.9], [2.0, -1.0]];
        assert_eq!(classification_accuracy(l.view(), &[1, 0]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(l.view(), &[0, 0]).unwrap(), 0.5);
    }
}
