//! Inputs shared by the benchmarks in `benches/`.

/// Balanced ultrametric tree with `2^depth` sampled tips of type 1, each
/// level `branch` long, on a stem of the same length.
pub fn balanced_tree(depth: u32, branch: f64) -> String {
    fn subtree(level: u32, depth: u32, branch: f64, next: &mut usize, out: &mut String) {
        if level == depth {
            *next += 1;
            out.push_str(&format!("t{next}[&type=1,event=sample]:{branch}"));
            return;
        }
        out.push('(');
        subtree(level + 1, depth, branch, next, out);
        out.push(',');
        subtree(level + 1, depth, branch, next, out);
        out.push_str(&format!(")[&type=1]:{branch}"));
    }
    let mut out = String::from("(");
    subtree(0, depth, branch, &mut 0, &mut out);
    out.push_str(")[&type=1];");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_tree_parses() {
        let tree = mfbd_core::parse_tree(&balanced_tree(3, 0.5)).unwrap();
        let tips = tree.nodes.iter().filter(|n| n.children.is_empty()).count();
        assert_eq!(tips, 8);
        assert!((tree.tau - 2.0).abs() < 1e-12);
    }
}
