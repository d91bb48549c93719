use serde::{Deserialize, Serialize};

/// Dense class index <-> block-count tuple (cubes, rectangles, long
/// rectangles, triangles). Classes are sorted lexicographically, so the
/// mapping does not depend on the order records were seen in.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Codebook {
    classes: Vec<[usize; 4]>,
}

impl Codebook {
    pub fn build<I: IntoIterator<Item = [usize; 4]>>(counts: I) -> Self {
        let mut classes: Vec<[usize; 4]> = counts.into_iter().collect();
        classes.sort_unstable();
        classes.dedup();
        Self { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, counts: &[usize; 4]) -> Option<usize> {
        self.classes.binary_search(counts).ok()
    }

    pub fn counts(&self, index: usize) -> Option<[usize; 4]> {
        self.classes.get(index).copied()
    }

    pub fn classes(&self) -> &[[usize; 4]] {
        &self.classes
    }
}
