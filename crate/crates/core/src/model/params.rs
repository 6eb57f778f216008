use std::fmt::Write as _;

use serde::Serialize;

use super::EmoTech;
use crate::tensor::Real;

/// Total quoted for the reference architecture with a 2843-word vocabulary.
pub const REFERENCE_PARAMETERS: usize = 7_295_821;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterGroup {
    /// The first two segments of the parameter names, e.g. `audio/dense`.
    pub name: String,
    pub count: usize,
    pub trainable: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterReport {
    pub groups: Vec<ParameterGroup>,
    pub total: usize,
    pub trainable: usize,
    pub embedding_dim: usize,
}

/// Every stored array counts, batch-norm running statistics included.
pub fn count_parameters<T: Real>(model: &EmoTech<T>) -> ParameterReport {
    let mut groups: Vec<ParameterGroup> = Vec::new();
    for e in model.store().entries() {
        let name = e.name.splitn(3, '/').take(2).collect::<Vec<_>>().join("/");
        let idx = match groups.iter().position(|g| g.name == name) {
            Some(i) => i,
            None => {
                groups.push(ParameterGroup {
                    name,
                    count: 0,
                    trainable: 0,
                });
                groups.len() - 1
            }
        };
        groups[idx].count += e.value.len();
        if e.trainable {
            groups[idx].trainable += e.value.len();
        }
    }
    ParameterReport {
        total: groups.iter().map(|g| g.count).sum(),
        trainable: groups.iter().map(|g| g.trainable).sum(),
        groups,
        embedding_dim: model.config().embed_dim,
    }
}

impl ParameterReport {
    pub fn group(&self, name: &str) -> Option<usize> {
        self.groups.iter().find(|g| g.name == name).map(|g| g.count)
    }

    /// Groups whose name starts with `prefix`, summed.
    pub fn block(&self, prefix: &str) -> usize {
        self.groups
            .iter()
            .filter(|g| g.name.starts_with(prefix))
            .map(|g| g.count)
            .sum()
    }

    /// Signed difference from [`REFERENCE_PARAMETERS`].
    pub fn difference(&self) -> i64 {
        self.total as i64 - REFERENCE_PARAMETERS as i64
    }

    pub fn relative_difference(&self) -> f64 {
        self.difference() as f64 / REFERENCE_PARAMETERS as f64
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>12} {:>12}", "block", "parameters", "trainable");
        for g in &self.groups {
            let _ = writeln!(s, "{:<24} {:>12} {:>12}", g.name, group_digits(g.count), group_digits(g.trainable));
        }
        let _ = writeln!(s, "{:<24} {:>12} {:>12}", "total", group_digits(self.total), group_digits(self.trainable));
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "audio block {}, text block {}, classifier {}",
            group_digits(self.block("audio/")),
            group_digits(self.block("text/")),
            group_digits(self.block("classifier/"))
        );
        let diff = self.difference();
        let _ = writeln!(
            s,
            "reference total {}: difference {:+} ({:+.3}%)",
            group_digits(REFERENCE_PARAMETERS),
            diff,
            100.0 * self.relative_difference()
        );
        if diff != 0 && self.embedding_dim > 0 && diff % self.embedding_dim as i64 == 0 {
            let _ = writeln!(
                s,
                "the difference is exactly {} embedding rows of width {}; the reference total is consistent \
                 with an embedding table of {} rows, the remaining blocks being equal",
                diff / self.embedding_dim as i64,
                self.embedding_dim,
                group_digits(
                    (self.group("text/embedding").unwrap_or(0) as i64 / self.embedding_dim as i64 - diff / self.embedding_dim as i64)
                        .max(0) as usize
                )
            );
        }
        s
    }
}

fn group_digits(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::group_digits;

    #[test]
    fn digit_grouping() {
        assert_eq!(group_digits(0), "0");
        assert_eq!(group_digits(999), "999");
        assert_eq!(group_digits(7_295_821), "7,295,821");
    }
}
