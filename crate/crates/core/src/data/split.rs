use rand::Rng;

use super::DomainDataset;
use crate::error::{Error, Result};

/// Indices into a dataset: one query image per identity, the rest gallery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGallerySplit {
    pub query: Vec<usize>,
    pub gallery: Vec<usize>,
}

impl QueryGallerySplit {
    pub fn materialise(&self, ds: &DomainDataset) -> (DomainDataset, DomainDataset) {
        (ds.subset(&self.query), ds.subset(&self.gallery))
    }
}

/// Picks one image of every identity uniformly at random as its query. Both
/// index lists are ascending.
pub fn make_query_gallery_split<R: Rng + ?Sized>(ds: &DomainDataset, rng: &mut R) -> Result<QueryGallerySplit> {
    let mut by_identity: Vec<Vec<usize>> = vec![Vec::new(); ds.identities];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_identity[y].push(i);
    }
    let mut query = Vec::new();
    let mut is_query = vec![false; ds.len()];
    for (id, images) in by_identity.iter().enumerate() {
        match images.len() {
            0 => continue,
            1 => {
                return Err(Error::Config(format!(
                    "identity {id} has a single image and cannot be both query and gallery"
                )))
            }
            n => {
                let pick = images[rng.random_range(0..n)];
                is_query[pick] = true;
                query.push(pick);
            }
        }
    }
    query.sort_unstable();
    let gallery = (0..ds.len()).filter(|&i| !is_query[i]).collect();
    Ok(QueryGallerySplit { query, gallery })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::rng;
    use ndarray::Array2;

    fn ds(ids: usize, per: usize) -> DomainDataset {
        let labels: Vec<usize> = (0..ids).flat_map(|i| std::iter::repeat_n(i, per)).collect();
        DomainDataset::new(0, ids, Split::Test, Array2::zeros((labels.len(), 2)), labels).unwrap()
    }

    #[test]
    fn one_query_per_identity() {
        let d = ds(10, 5);
        let s = make_query_gallery_split(&d, &mut rng::seeded(4)).unwrap();
        assert_eq!(s.query.len(), 10);
        assert_eq!(s.gallery.len(), 40);
        assert!(s.query.iter().all(|q| !s.gallery.contains(q)));
        let mut qids: Vec<usize> = s.query.iter().map(|&q| d.labels()[q]).collect();
        qids.sort();
        assert_eq!(qids, (0..10).collect::<Vec<_>>());
        for &q in &s.query {
            assert!(s.gallery.iter().any(|&g| d.labels()[g] == d.labels()[q]));
        }
    }

    #[test]
    fn reproducible() {
        let d = ds(7, 3);
        let a = make_query_gallery_split(&d, &mut rng::seeded(1)).unwrap();
        let b = make_query_gallery_split(&d, &mut rng::seeded(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_image_identity_is_rejected() {
        let labels = vec![0, 0, 1];
        let d = DomainDataset::new(0, 2, Split::Test, Array2::zeros((3, 1)), labels).unwrap();
        assert!(matches!(make_query_gallery_split(&d, &mut rng::seeded(0)), Err(Error::Config(_))));
    }
}
