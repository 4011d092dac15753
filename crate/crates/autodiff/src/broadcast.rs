/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for (k, slot) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - k);
        let db = dim_from_right(b, rank - 1 - k);
        *slot = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// Maps flat output indices of a broadcast result back to input indices.
pub(crate) enum BroadcastMap {
    Same,
    Scalar,
    /// Input repeats along leading dims: `o % len`.
    Modulo(usize),
    /// Input repeats along trailing dims: `o / block`.
    Div(usize),
    Table(Vec<usize>),
}

impl BroadcastMap {
    pub(crate) fn new(in_shape: &[usize], out_shape: &[usize]) -> Self {
        let in_len: usize = in_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        if in_shape == out_shape || in_len == out_len {
            return Self::Same;
        }
        if in_len == 1 {
            return Self::Scalar;
        }
        let rank = out_shape.len();
        let padded: Vec<usize> = (0..rank).map(|k| dim_from_right(in_shape, rank - 1 - k)).collect();

        // leading broadcast dims followed by an exact suffix
        let first_match = padded
            .iter()
            .zip(out_shape)
            .position(|(p, o)| p == o && *p != 1)
            .unwrap_or(rank);
        if padded[..first_match].iter().all(|&d| d == 1) && padded[first_match..] == out_shape[first_match..] {
            return Self::Modulo(in_len);
        }

        // exact prefix followed by trailing broadcast dims
        let last_match = padded
            .iter()
            .zip(out_shape)
            .rposition(|(p, o)| p == o && *p != 1)
            .map_or(0, |p| p + 1);
        if padded[last_match..].iter().all(|&d| d == 1) && padded[..last_match] == out_shape[..last_match] {
            return Self::Div(out_shape[last_match..].iter().product());
        }

        let mut strides = vec![0usize; rank];
        let mut s = 1;
        for k in (0..rank).rev() {
            strides[k] = if padded[k] == 1 { 0 } else { s };
            s *= padded[k];
        }
        let mut table = Vec::with_capacity(out_len);
        let mut counter = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..out_len {
            table.push(offset);
            for k in (0..rank).rev() {
                counter[k] += 1;
                offset += strides[k];
                if counter[k] < out_shape[k] {
                    break;
                }
                offset -= strides[k] * counter[k];
                counter[k] = 0;
            }
        }
        Self::Table(table)
    }

    #[inline]
    pub(crate) fn index(&self, o: usize) -> usize {
        match self {
            Self::Same => o,
            Self::Scalar => 0,
            Self::Modulo(len) => o % len,
            Self::Div(block) => o / block,
            Self::Table(t) => t[o],
        }
    }

    pub(crate) fn for_each(&self, out_shape: &[usize], mut f: impl FnMut(usize, usize)) {
        let total: usize = out_shape.iter().product();
        match *self {
            Self::Same => (0..total).for_each(|o| f(o, o)),
            Self::Scalar => (0..total).for_each(|o| f(o, 0)),
            Self::Modulo(len) => {
                for base in (0..total).step_by(len.max(1)) {
                    for k in 0..len {
                        f(base + k, k);
                    }
                }
            }
            Self::Div(block) => {
                for (i, base) in (0..total).step_by(block.max(1)).enumerate() {
                    for r in 0..block {
                        f(base + r, i);
                    }
                }
            }
            Self::Table(ref t) => t.iter().enumerate().for_each(|(o, &k)| f(o, k)),
        }
    }
}
