//! Synthetic multi-domain datasets.
//!
//! Every domain owns a private identity space: labels are dense in
//! `0..identities` and the global identity of a sample is the pair
//! `(domain_id, label)`, so two domains never share an identity.

mod augment;
mod generate;
mod io;
mod split;
mod suite;

pub use augment::{augment, augment_batch, AugmentConfig};
pub use generate::{generate_domain, orthogonal_transform, DomainSpec, DomainTransform};
pub use io::{dataset_from_bytes, dataset_to_bytes, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use split::{make_query_gallery_split, QueryGallerySplit};
pub use suite::SyntheticSuite;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }
}

/// Globally unique identity: `(domain id, local label)`.
pub type GlobalIdentity = (u32, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: u32,
    pub identities: usize,
    pub split: Split,
    features: Array2<f64>,
    labels: Vec<usize>,
}

impl DomainDataset {
    pub fn new(
        domain_id: u32,
        identities: usize,
        split: Split,
        features: Array2<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        check_dim("dataset labels", features.nrows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= identities) {
            return Err(Error::Input(format!(
                "label {bad} outside the identity space of size {identities}"
            )));
        }
        Ok(Self {
            domain_id,
            identities,
            split,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn sample(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn global_identity(&self, i: usize) -> GlobalIdentity {
        (self.domain_id, self.labels[i])
    }

    /// Rows at `indices`, in the given order.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.features.select(Axis(0), indices)
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            domain_id: self.domain_id,
            identities: self.identities,
            split: self.split,
            features: self.rows(indices),
            labels: self.labels_at(indices),
        }
    }

    /// Number of images per label.
    pub fn identity_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.identities];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Concatenates datasets into one with a joint label space: labels of the
    /// `k`-th dataset are offset by the identity counts of the datasets before
    /// it. Used for centralised training.
    pub fn pooled(datasets: &[DomainDataset]) -> Result<DomainDataset> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::Input("cannot pool zero datasets".into()))?;
        let dim = first.feature_dim();
        let mut labels = Vec::new();
        let mut views = Vec::new();
        let mut offset = 0;
        for ds in datasets {
            check_dim("pooled feature dimension", dim, ds.feature_dim())?;
            labels.extend(ds.labels.iter().map(|y| y + offset));
            views.push(ds.features.view());
            offset += ds.identities;
        }
        let features = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::Input(format!("pooling datasets: {e}")))?;
        DomainDataset::new(first.domain_id, offset, first.split, features, labels)
    }
}
