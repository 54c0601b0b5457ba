//! Dense row-major 2-rank integer tensors and the off-chip tensor store.

use std::fmt;

/// Row-major matrix of i32. Operand values are expected to stay in the i8
/// range; accumulators use the full i32 width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<i32>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> i32) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<i32>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        Mat::from_fn(r, c, |i, j| rows[i][j])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.cols + c]
    }

    /// Zero for coordinates outside the matrix.
    #[inline]
    pub fn get_padded(&self, r: usize, c: usize) -> i32 {
        if r < self.rows && c < self.cols {
            self.data[r * self.cols + c]
        } else {
            0
        }
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    /// FNV-1a over dimensions and contents; used as the output digest.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.rows as u64);
        eat(self.cols as u64);
        for &v in &self.data {
            eat(v as u32 as u64);
        }
        h
    }
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.get(r, c))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// One off-chip tensor. In timing-only simulation the data is absent and
/// only the shape is used.
#[derive(Debug, Clone)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Option<Mat>,
}

/// Off-chip tensor store; tensors are addressed by the small integer ids
/// carried in Load/Write instructions.
#[derive(Debug, Clone, Default)]
pub struct TensorStore {
    entries: Vec<TensorEntry>,
}

impl TensorStore {
    pub fn new() -> Self {
        TensorStore::default()
    }

    pub fn add(&mut self, name: &str, mat: Mat) -> u16 {
        let id = self.entries.len() as u16;
        self.entries.push(TensorEntry {
            name: name.to_string(),
            rows: mat.rows,
            cols: mat.cols,
            data: Some(mat),
        });
        id
    }

    /// Register shape only; reads return zeros and writes are dropped.
    pub fn add_shape(&mut self, name: &str, rows: usize, cols: usize) -> u16 {
        let id = self.entries.len() as u16;
        self.entries.push(TensorEntry {
            name: name.to_string(),
            rows,
            cols,
            data: None,
        });
        id
    }

    pub fn get(&self, id: u16) -> Option<&TensorEntry> {
        self.entries.get(id as usize)
    }

    pub fn get_mut(&mut self, id: u16) -> Option<&mut TensorEntry> {
        self.entries.get_mut(id as usize)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padded_reads() {
        let m = Mat::from_fn(2, 3, |r, c| (r * 3 + c) as i32);
        assert_eq!(m.get_padded(1, 2), 5);
        assert_eq!(m.get_padded(2, 0), 0);
        assert_eq!(m.get_padded(0, 3), 0);
    }

    #[test]
    fn digest_distinguishes() {
        let a = Mat::from_fn(2, 2, |r, c| (r + c) as i32);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.set(1, 1, 99);
        assert_ne!(a.digest(), b.digest());
    }
}
