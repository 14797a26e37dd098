use crate::error::{Error, Result};
use crate::quant::QuantizerGrid;
use crate::tensor::TokenTensor;

/// One training/evaluation target: the tokens at a position together with
/// what the context aggregator sees there.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    /// Mean dequantized vector over earlier positions of the same sample,
    /// `None` at the first position.
    pub summary: Option<&'a [f64]>,
    pub label: Option<usize>,
    /// Tokens in natural channel layout.
    pub tokens: &'a [u16],
}

/// Position-level view of a token tensor with teacher-forced spatial
/// context, precomputed in raster order.
#[derive(Debug, Clone)]
pub struct TokenDataset {
    channels: usize,
    tokens: Vec<u16>,
    summaries: Vec<f64>,
    first: Vec<bool>,
    labels: Vec<Option<usize>>,
}

impl TokenDataset {
    /// `labels`, when given, holds one class per sample (the `N` axis).
    pub fn from_tokens(
        tokens: &TokenTensor,
        labels: Option<&[usize]>,
        grid: &QuantizerGrid,
    ) -> Result<Self> {
        let shape = tokens.shape();
        if let Some(l) = labels {
            if l.len() != shape.n {
                return Err(Error::data(format!(
                    "{} labels for {} samples",
                    l.len(),
                    shape.n
                )));
            }
        }
        if let Some(max) = tokens.max_index() {
            if max as usize >= grid.levels() {
                return Err(Error::data(format!(
                    "token {max} out of range for B = {}",
                    grid.levels()
                )));
            }
        }
        let c = shape.c;
        let per_sample = shape.h * shape.w;
        let decoded = grid.decoded_values();
        let mut summaries = vec![0.0; shape.positions() * c];
        let mut first = vec![false; shape.positions()];
        let mut sample_labels = Vec::with_capacity(shape.positions());
        let mut running = vec![0.0; c];
        for (pos, vec) in tokens.vectors().enumerate() {
            let k = pos % per_sample;
            if k == 0 {
                running.iter_mut().for_each(|v| *v = 0.0);
                first[pos] = true;
            } else {
                for ch in 0..c {
                    summaries[pos * c + ch] = running[ch] / k as f64;
                }
            }
            for ch in 0..c {
                running[ch] += decoded[vec[ch] as usize];
            }
            sample_labels.push(Some(labels.map_or(0, |l| l[pos / per_sample])));
        }
        Ok(TokenDataset {
            channels: c,
            tokens: tokens.data().to_vec(),
            summaries,
            first,
            labels: sample_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        let c = self.channels;
        Example {
            summary: (!self.first[i]).then(|| &self.summaries[i * c..(i + 1) * c]),
            label: self.labels[i],
            tokens: &self.tokens[i * c..(i + 1) * c],
        }
    }

    pub fn examples(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.len()).map(|i| self.example(i))
    }

    /// Tokens of one channel over all positions.
    pub fn channel_tokens(&self, ch: usize) -> Vec<u16> {
        self.tokens
            .chunks_exact(self.channels)
            .map(|v| v[ch])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantizerSpec;
    use crate::tensor::Shape;

    #[test]
    fn summaries_are_running_means() {
        let grid = QuantizerSpec::gaussian(4).build_grid().unwrap();
        let shape = Shape::new(2, 1, 3, 1).unwrap();
        let t = TokenTensor::new(shape, vec![0, 3, 1, 2, 2, 2]).unwrap();
        let ds = TokenDataset::from_tokens(&t, Some(&[0, 1]), &grid).unwrap();
        let d = grid.decoded_values();
        assert!(ds.example(0).summary.is_none());
        assert_eq!(ds.example(1).summary.unwrap(), &[d[0]]);
        assert_eq!(ds.example(2).summary.unwrap(), &[(d[0] + d[3]) / 2.0]);
        assert!(ds.example(3).summary.is_none());
        assert_eq!(ds.example(4).label, Some(1));
        assert!(TokenDataset::from_tokens(&t, Some(&[0]), &grid).is_err());
        let bad = TokenTensor::filled(shape, 4);
        assert!(TokenDataset::from_tokens(&bad, None, &grid).is_err());
    }
}
