//! Hierarchical region timers. Each worker owns a private tree; trees are
//! merged by region path after the run.

use std::fmt::Write as _;
use std::time::Instant;

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimerNode {
    pub name: String,
    pub seconds: f64,
    pub calls: u64,
    pub children: Vec<TimerNode>,
}

impl TimerNode {
    fn named(name: &str) -> Self {
        TimerNode { name: name.to_string(), ..Default::default() }
    }

    fn child_mut(&mut self, name: &str) -> &mut TimerNode {
        match self.children.iter().position(|c| c.name == name) {
            Some(i) => &mut self.children[i],
            None => {
                self.children.push(TimerNode::named(name));
                self.children.last_mut().unwrap()
            }
        }
    }

    pub fn child(&self, name: &str) -> Option<&TimerNode> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn children_seconds(&self) -> f64 {
        self.children.iter().map(|c| c.seconds).sum()
    }
}

#[derive(Debug, Clone)]
pub struct TimerTree {
    root: TimerNode,
    open: Vec<(String, Instant)>,
}

impl Default for TimerTree {
    fn default() -> Self {
        TimerTree::new()
    }
}

impl TimerTree {
    pub fn new() -> Self {
        TimerTree { root: TimerNode::named(""), open: Vec::new() }
    }

    pub fn root(&self) -> &TimerNode {
        &self.root
    }

    pub fn start(&mut self, name: &str) {
        self.open.push((name.to_string(), Instant::now()));
    }

    pub fn stop(&mut self, name: &str) -> Result<f64> {
        match self.open.last() {
            Some((top, _)) if top == name => {}
            Some((top, _)) => {
                return Err(Error::Perf(format!("timer {name} stopped while {top} is innermost")));
            }
            None => return Err(Error::Perf(format!("timer {name} stopped but never started"))),
        }
        let (_, t0) = self.open.pop().unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let path: Vec<String> = self.open.iter().map(|(n, _)| n.clone()).chain([name.to_string()]).collect();
        let refs: Vec<&str> = path.iter().map(String::as_str).collect();
        self.add(&refs, secs, 1);
        Ok(secs)
    }

    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        self.start(name);
        let out = f();
        self.stop(name).expect("balanced timer");
        out
    }

    /// Records time for a region given by its full path.
    pub fn add(&mut self, path: &[&str], seconds: f64, calls: u64) {
        let mut node = &mut self.root;
        for name in path {
            node = node.child_mut(name);
        }
        node.seconds += seconds;
        node.calls += calls;
    }

    pub fn get(&self, path: &[&str]) -> Option<&TimerNode> {
        let mut node = &self.root;
        for name in path {
            node = node.child(name)?;
        }
        Some(node)
    }

    pub fn seconds(&self, path: &[&str]) -> f64 {
        self.get(path).map_or(0.0, |n| n.seconds)
    }

    /// Regions whose children add up to more than the region itself plus `slack`.
    pub fn nesting_violations(&self, slack: f64) -> Vec<String> {
        fn walk(n: &TimerNode, prefix: &str, slack: f64, out: &mut Vec<String>) {
            let path = if prefix.is_empty() { n.name.clone() } else { format!("{prefix}/{}", n.name) };
            if !n.name.is_empty() && n.children_seconds() > n.seconds + slack {
                out.push(path.clone());
            }
            for c in &n.children {
                walk(c, &path, slack, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.root, "", slack, &mut out);
        out
    }
}

/// Per-region statistics across workers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergedNode {
    pub name: String,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub calls: u64,
    pub workers: usize,
    pub children: Vec<MergedNode>,
}

impl MergedNode {
    pub fn get(&self, path: &[&str]) -> Option<&MergedNode> {
        let mut node = self;
        for name in path {
            node = node.children.iter().find(|c| c.name == *name)?;
        }
        Some(node)
    }
}

/// Merges trees by region name; statistics cover the workers that entered
/// the region.
pub fn merge(trees: &[&TimerTree]) -> MergedNode {
    fn go(name: &str, nodes: &[&TimerNode]) -> MergedNode {
        let secs: Vec<f64> = nodes.iter().map(|n| n.seconds).collect();
        let mut names: Vec<&str> = Vec::new();
        for n in nodes {
            for c in &n.children {
                if !names.contains(&c.name.as_str()) {
                    names.push(&c.name);
                }
            }
        }
        let children = names
            .into_iter()
            .map(|cn| {
                let sub: Vec<&TimerNode> = nodes.iter().filter_map(|n| n.child(cn)).collect();
                go(cn, &sub)
            })
            .collect();
        MergedNode {
            name: name.to_string(),
            max: secs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0),
            min: secs.iter().cloned().fold(f64::INFINITY, f64::min).min(f64::MAX),
            mean: if secs.is_empty() { 0.0 } else { secs.iter().sum::<f64>() / secs.len() as f64 },
            calls: nodes.iter().map(|n| n.calls).max().unwrap_or(0),
            workers: nodes.len(),
            children,
        }
    }
    let roots: Vec<&TimerNode> = trees.iter().map(|t| &t.root).collect();
    go("", &roots)
}

/// Text table in the style of a timing summary file.
pub fn render(m: &MergedNode) -> String {
    fn walk(n: &MergedNode, depth: usize, out: &mut String) {
        if !n.name.is_empty() {
            let label = format!("{}{}", "  ".repeat(depth - 1), n.name);
            let _ = writeln!(
                out,
                "{label:<32} {:>8} {:>8} {:>12.6} {:>12.6} {:>12.6}",
                n.workers, n.calls, n.max, n.min, n.mean
            );
        }
        for c in &n.children {
            walk(c, depth + 1, out);
        }
    }
    let mut out = format!(
        "{:<32} {:>8} {:>8} {:>12} {:>12} {:>12}\n",
        "region", "workers", "calls", "max_s", "min_s", "mean_s"
    );
    walk(m, 0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_regions_accumulate() {
        let mut t = TimerTree::new();
        for _ in 0..3 {
            t.start("run");
            t.time("lnd", || std::hint::black_box((0..1000).sum::<u64>()));
            t.stop("run").unwrap();
        }
        let run = t.get(&["run"]).unwrap();
        assert_eq!(run.calls, 3);
        assert_eq!(t.get(&["run", "lnd"]).unwrap().calls, 3);
        assert!(t.nesting_violations(1e-3).is_empty());
        assert!(t.stop("run").is_err());
        t.start("a");
        assert!(t.stop("b").is_err());
    }

    #[test]
    fn merge_keeps_worker_extremes() {
        let mut a = TimerTree::new();
        a.add(&["LND:RUN"], 2.0, 10);
        a.add(&["LND:RUN", "step"], 1.5, 10);
        let mut b = TimerTree::new();
        b.add(&["LND:RUN"], 4.0, 10);
        let mut c = TimerTree::new();
        c.add(&["ATM:RUN"], 1.0, 1);
        let m = merge(&[&a, &b, &c]);
        let lnd = m.get(&["LND:RUN"]).unwrap();
        assert_eq!((lnd.max, lnd.min, lnd.mean, lnd.workers), (4.0, 2.0, 3.0, 2));
        assert_eq!(m.get(&["LND:RUN", "step"]).unwrap().workers, 1);
        assert_eq!(m.get(&["ATM:RUN"]).unwrap().max, 1.0);
        let text = render(&m);
        assert!(text.contains("LND:RUN") && text.contains("  step"));
    }
}
