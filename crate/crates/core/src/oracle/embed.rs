//! Deterministic local text embedder: feature hashing of character n-grams.

/// Output dimension of [`LocalEmbedder`].
pub const LOCAL_DIM: usize = 256;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hashes character 1-, 2- and 3-grams of the lowercased text into
/// [`LOCAL_DIM`] signed buckets, then L2-normalizes.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalEmbedder;

impl LocalEmbedder {
    pub const ID: &'static str = "local-ngram-hash-256";

    /// `None` for empty text.
    pub fn embed(&self, text: &str) -> Option<Vec<f64>> {
        if text.is_empty() {
            return None;
        }
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut acc = vec![0f64; LOCAL_DIM];
        let mut buf = String::new();
        for n in 1..=3usize {
            if chars.len() < n {
                break;
            }
            for window in chars.windows(n) {
                buf.clear();
                buf.push(char::from(b'0' + n as u8));
                buf.extend(window);
                let h = fnv1a(buf.as_bytes());
                let bucket = (h % LOCAL_DIM as u64) as usize;
                let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
                acc[bucket] += sign;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Every n-gram cancelled out; fall back to a fixed axis.
            let mut v = vec![0f64; LOCAL_DIM];
            v[(fnv1a(text.as_bytes()) % LOCAL_DIM as u64) as usize] = 1.0;
            return Some(v);
        }
        Some(acc.iter().map(|x| x / norm).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let e = LocalEmbedder;
        let a = e.embed("The butler was in the pantry.").unwrap();
        let b = e.embed("The butler was in the pantry.").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), LOCAL_DIM);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(LocalEmbedder.embed("").is_none());
    }

    #[test]
    fn few_collisions_over_a_corpus() {
        let e = LocalEmbedder;
        let corpus: Vec<String> = (0..1000)
            .map(|i| format!("witness {} saw suspect {} near room {}", i % 37, i, i * 7 % 101))
            .collect();
        let vecs: Vec<Vec<f64>> = corpus.iter().map(|t| e.embed(t).unwrap()).collect();
        let mut collisions = 0;
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                if vecs[i] == vecs[j] {
                    collisions += 1;
                }
            }
        }
        assert!(collisions <= 1, "{collisions} colliding pairs");
    }
}
