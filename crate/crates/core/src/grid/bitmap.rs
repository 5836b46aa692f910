use super::geometry::{GridGeometry, Vec3};
use crate::error::{Error, Result};

/// One bit per lattice node, in the same x-fastest order as [`super::DenseGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Bitmap3D {
    geometry: GridGeometry,
    words: Vec<u64>,
}

impl Bitmap3D {
    pub fn empty(geometry: GridGeometry) -> Self {
        let words = vec![0u64; geometry.node_count().div_ceil(64)];
        Self { geometry, words }
    }

    pub fn full(geometry: GridGeometry) -> Self {
        let mut b = Self::empty(geometry);
        b.words.fill(u64::MAX);
        b.clear_tail();
        b
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut b = Self::empty(geometry);
        for i in 0..b.len() {
            if f(i) {
                b.set(i, true);
            }
        }
        b
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.geometry.node_count()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.words[index / 64] >> (index % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, index: usize, value: bool) {
        let mask = 1u64 << (index % 64);
        if value {
            self.words[index / 64] |= mask;
        } else {
            self.words[index / 64] &= !mask;
        }
    }

    /// Bit of the node nearest to `p`; false outside the box.
    #[inline]
    pub fn sample_nearest(&self, p: &Vec3) -> bool {
        self.geometry.nearest_node(p).is_some_and(|i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    fn clear_tail(&mut self) {
        let rem = self.len() % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn zip_with(&self, other: &Bitmap3D, f: impl Fn(u64, u64) -> u64) -> Result<Bitmap3D> {
        if self.geometry != other.geometry {
            return Err(Error::GeometryMismatch(format!(
                "bitmaps {:?} and {:?}",
                self.geometry.resolution(),
                other.geometry.resolution()
            )));
        }
        let words = self.words.iter().zip(&other.words).map(|(a, b)| f(*a, *b)).collect();
        let mut out = Bitmap3D { geometry: self.geometry.clone(), words };
        out.clear_tail();
        Ok(out)
    }

    pub fn union(&self, other: &Bitmap3D) -> Result<Bitmap3D> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersect(&self, other: &Bitmap3D) -> Result<Bitmap3D> {
        self.zip_with(other, |a, b| a & b)
    }

    /// `self ∩ (self ∩ other)'`, i.e. the nodes of `self` not in `other`.
    pub fn subtract(&self, other: &Bitmap3D) -> Result<Bitmap3D> {
        self.zip_with(other, |a, b| a & !(a & b))
    }

    pub fn complement(&self) -> Bitmap3D {
        let mut out = Bitmap3D { geometry: self.geometry.clone(), words: self.words.iter().map(|w| !w).collect() };
        out.clear_tail();
        out
    }

    pub fn is_subset_of(&self, other: &Bitmap3D) -> bool {
        self.geometry == other.geometry && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Packed bytes, node `i` at bit `i % 8` (LSB first) of byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len().div_ceil(8);
        self.words.iter().flat_map(|w| w.to_le_bytes()).take(n).collect()
    }

    pub fn from_bytes(geometry: GridGeometry, bytes: &[u8]) -> Result<Self> {
        let expected = geometry.node_count().div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::ShapeMismatch(format!("bitmap needs {expected} bytes, got {}", bytes.len())));
        }
        let mut b = Self::empty(geometry);
        for (wi, chunk) in bytes.chunks(8).enumerate() {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            b.words[wi] = u64::from_le_bytes(buf);
        }
        let before = b.words.clone();
        b.clear_tail();
        if before != b.words {
            return Err(Error::format("bitmap", "padding bits must be zero"));
        }
        Ok(b)
    }
}
