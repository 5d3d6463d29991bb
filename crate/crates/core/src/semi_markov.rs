//! Transfer functions of directed graphs with jet-valued edge labels, and the
//! delivery-cycle graph whose transfer function to the virtual sink is the
//! interdeparture MGF.
//!
//! `H(u) = 1` at the start node and `H(v) = sum_{v' -> v} e_{v' -> v} H(v')`
//! elsewhere; the linear system is solved by Gaussian elimination in jet
//! arithmetic, pivoting on constant terms.

use thiserror::Error;

use crate::analytic::{AnalyticError, SystemConfig};
use crate::jet::{Jet, JetError, DIVISION_FLOOR};
use crate::service::ServiceError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemiMarkovError {
    #[error("node index {0} out of range")]
    NodeOutOfRange(usize),
    #[error("start node {0} may not have incoming edges")]
    StartHasIncoming(usize),
    #[error("edge label must share center {center} and order {order}")]
    LabelMismatch { center: f64, order: usize },
    #[error("edge label is not finite")]
    NonFiniteLabel,
    #[error("singular transfer system: best pivot constant {pivot:e}")]
    SingularSystem { pivot: f64 },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
}

impl From<ServiceError> for SemiMarkovError {
    fn from(e: ServiceError) -> Self {
        Self::Analytic(AnalyticError::Service(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub label: Jet,
}

/// Directed graph with a designated start node and jet-valued edge labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDigraph {
    names: Vec<String>,
    start: usize,
    center: f64,
    order: usize,
    edges: Vec<Edge>,
}

impl LabeledDigraph {
    pub fn new(
        names: Vec<String>,
        start: usize,
        center: f64,
        order: usize,
    ) -> Result<Self, SemiMarkovError> {
        if start >= names.len() {
            return Err(SemiMarkovError::NodeOutOfRange(start));
        }
        Ok(Self {
            names,
            start,
            center,
            order,
            edges: Vec::new(),
        })
    }

    pub fn add_edge(&mut self, from: usize, to: usize, label: Jet) -> Result<(), SemiMarkovError> {
        let n = self.names.len();
        if from >= n {
            return Err(SemiMarkovError::NodeOutOfRange(from));
        }
        if to >= n {
            return Err(SemiMarkovError::NodeOutOfRange(to));
        }
        if to == self.start {
            return Err(SemiMarkovError::StartHasIncoming(self.start));
        }
        if label.center() != self.center || label.order() != self.order {
            return Err(SemiMarkovError::LabelMismatch {
                center: self.center,
                order: self.order,
            });
        }
        if !label.is_finite() {
            return Err(SemiMarkovError::NonFiniteLabel);
        }
        self.edges.push(Edge { from, to, label });
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn node(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn center(&self) -> f64 {
        self.center
    }
}

/// Transfer function of every node, indexed like the graph's nodes.
pub fn transfer_functions(g: &LabeledDigraph) -> Result<Vec<Jet>, SemiMarkovError> {
    let n = g.node_count();
    let (center, order) = (g.center, g.order);
    // unknowns are all nodes but the start
    let index: Vec<Option<usize>> = {
        let mut next = 0;
        (0..n)
            .map(|v| {
                if v == g.start {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect()
    };
    let m = n - 1;
    let zero = Jet::zero(center, order);
    let mut a = vec![vec![zero.clone(); m]; m];
    let mut b = vec![zero.clone(); m];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = Jet::one(center, order);
    }
    for e in &g.edges {
        let row = index[e.to].expect("no edge enters the start node");
        match index[e.from] {
            None => b[row] = b[row].try_add(&e.label)?,
            Some(col) => a[row][col] = a[row][col].try_sub(&e.label)?,
        }
    }

    for col in 0..m {
        let (pivot_row, pivot) = (col..m)
            .map(|r| (r, a[r][col].value().abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot < DIVISION_FLOOR {
            return Err(SemiMarkovError::SingularSystem { pivot });
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..m {
            if a[r][col].coeffs().iter().all(|&x| x == 0.0) {
                continue;
            }
            let factor = a[r][col].try_div(&a[col][col])?;
            for k in col..m {
                let delta = factor.try_mul(&a[col][k])?;
                a[r][k] = a[r][k].try_sub(&delta)?;
            }
            let delta = factor.try_mul(&b[col])?;
            b[r] = b[r].try_sub(&delta)?;
        }
    }
    let mut x = vec![zero; m];
    for row in (0..m).rev() {
        let mut acc = b[row].clone();
        for k in row + 1..m {
            acc = acc.try_sub(&a[row][k].try_mul(&x[k])?)?;
        }
        x[row] = acc.try_div(&a[row][row])?;
    }

    Ok((0..n)
        .map(|v| match index[v] {
            None => Jet::one(center, order),
            Some(i) => x[i].clone(),
        })
        .collect())
}

/// Largest coefficient residual of the fixed-point equations for `h`.
pub fn fixed_point_residual(g: &LabeledDigraph, h: &[Jet]) -> Result<f64, SemiMarkovError> {
    let mut worst: f64 = (h[g.start].try_sub(&Jet::one(g.center, g.order))?)
        .coeffs()
        .iter()
        .fold(0.0, |m, c| m.max(c.abs()));
    for v in (0..g.node_count()).filter(|&v| v != g.start) {
        let mut rhs = Jet::zero(g.center, g.order);
        for e in g.edges.iter().filter(|e| e.to == v) {
            rhs = rhs.try_add(&e.label.try_mul(&h[e.from])?)?;
        }
        let r = h[v].try_sub(&rhs)?;
        worst = r.coeffs().iter().fold(worst, |m, c| m.max(c.abs()));
    }
    Ok(worst)
}

/// Transition probabilities and sojourn-time MGF jets for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSojourn {
    /// `p_c = lambda_c / lambda`: this source wins the arrival race at an idle server.
    pub p_race: f64,
    /// `pbar_c = M_U(-theta lambda_c)`: a packet entering service is delivered.
    pub p_deliver: f64,
    /// `p'_c = 1 - M_U(-theta lambda_c)`: a packet in service is preempted.
    pub p_preempt: f64,
    /// MGF of the idle sojourn before an arrival, `lambda / (lambda - s)`.
    pub race_mgf: Jet,
    /// MGF of a service that ends in delivery.
    pub deliver_mgf: Jet,
    /// MGF of a service that ends in preemption.
    pub preempt_mgf: Jet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SojournKit {
    pub sources: Vec<SourceSojourn>,
}

/// Transition probabilities and sojourn MGFs of the delivery-cycle chain.
///
/// The preemption sojourn has density
/// `theta lambda e^{-theta lambda t} P(U > t) / p'`, so its MGF is
/// `theta lambda int e^{(s - theta lambda) t} P(U > t) dt / p'`; the integral is the
/// service tail transform. The preemption probability uses the same integral at
/// `s = 0`, which avoids the cancellation in `1 - M_U(-theta lambda)` for small rates.
pub fn sojourn_kit(cfg: &SystemConfig, order: usize) -> Result<SojournKit, SemiMarkovError> {
    let lambda = cfg.total_rate();
    let race_mgf = Jet::constant(0.0, order, lambda)
        .try_div(&Jet::affine(0.0, order, lambda, -1.0))?;
    let service = cfg.service();
    let sources = (0..cfg.sources())
        .map(|c| {
            let rate = cfg.preemption_rate(c);
            let p_deliver = service.mgf_point(-rate)?;
            let deliver_mgf = service
                .mgf_jet(-rate, order)?
                .recentered(0.0)
                .scale(1.0 / p_deliver);
            let (p_preempt, preempt_mgf) = if rate == 0.0 {
                (0.0, Jet::one(0.0, order))
            } else {
                let tail = service.tail_transform_jet(-rate, order)?.recentered(0.0);
                let g0 = tail.value();
                (rate * g0, tail.scale(1.0 / g0))
            };
            Ok(SourceSojourn {
                p_race: cfg.rate(c) / lambda,
                p_deliver,
                p_preempt,
                race_mgf: race_mgf.clone(),
                deliver_mgf,
                preempt_mgf,
            })
        })
        .collect::<Result<Vec<_>, SemiMarkovError>>()?;
    Ok(SojournKit { sources })
}

pub const NODE_START: &str = "q0";
pub const NODE_OTHER_DELIVERED: &str = "q0'";
pub const NODE_SINK: &str = "q0bar";

/// Delivery-cycle graph for source `c`.
///
/// Nodes: `q0` (start, just after a source-`c` delivery), `q1..qC` (a packet
/// of that source in service), `q0'` (idle after another source's delivery)
/// and the virtual sink `q0bar` (next source-`c` delivery).
pub fn build_interdeparture_graph(
    cfg: &SystemConfig,
    c: usize,
    order: usize,
) -> Result<LabeledDigraph, SemiMarkovError> {
    cfg.check_source(c)?;
    let kit = sojourn_kit(cfg, order)?;
    let n_src = cfg.sources();
    let mut names = vec![NODE_START.to_string()];
    names.extend((1..=n_src).map(|k| format!("q{k}")));
    names.push(NODE_OTHER_DELIVERED.to_string());
    names.push(NODE_SINK.to_string());
    let q = |k: usize| 1 + k;
    let other_idle = n_src + 1;
    let sink = n_src + 2;

    let mut g = LabeledDigraph::new(names, 0, 0.0, order)?;
    for (k, src) in kit.sources.iter().enumerate() {
        let arrive = src.race_mgf.scale(src.p_race);
        g.add_edge(0, q(k), arrive.clone())?;
        g.add_edge(other_idle, q(k), arrive)?;
        g.add_edge(q(k), q(k), src.preempt_mgf.scale(src.p_preempt))?;
        let deliver = src.deliver_mgf.scale(src.p_deliver);
        if k == c {
            g.add_edge(q(k), sink, deliver)?;
        } else {
            g.add_edge(q(k), other_idle, deliver)?;
        }
    }
    Ok(g)
}

/// Interdeparture MGF jet of source `c` as the sink's transfer function.
pub fn interdeparture_via_graph(
    cfg: &SystemConfig,
    c: usize,
    order: usize,
) -> Result<Jet, SemiMarkovError> {
    let g = build_interdeparture_graph(cfg, c, order)?;
    let sink = g.node(NODE_SINK).expect("sink node present");
    Ok(transfer_functions(&g)?.swap_remove(sink))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::interdeparture_mgf_jet;
    use crate::service::ServiceDistribution;

    fn j(c: &[f64]) -> Jet {
        Jet::new(0.0, c.to_vec()).unwrap()
    }

    #[test]
    fn chain_and_self_loop() {
        let x = j(&[0.5, 0.2, 0.1]);
        let mut g = LabeledDigraph::new(vec!["u".into(), "v".into()], 0, 0.0, 2).unwrap();
        g.add_edge(0, 1, x.clone()).unwrap();
        let h = transfer_functions(&g).unwrap();
        assert_eq!(h[0], Jet::one(0.0, 2));
        assert_eq!(h[1], x);

        let a = j(&[0.3, 1.0, 0.0]);
        let b = j(&[0.6, 0.1, -0.2]);
        let mut g = LabeledDigraph::new(vec!["u".into(), "v".into()], 0, 0.0, 2).unwrap();
        g.add_edge(0, 1, a.clone()).unwrap();
        g.add_edge(1, 1, b.clone()).unwrap();
        let h = transfer_functions(&g).unwrap();
        let want = a.try_div(&b.rsub_scalar(1.0)).unwrap();
        assert!(h[1].max_relative_diff(&want) < 1e-15);
    }

    #[test]
    fn start_node_cannot_receive_edges() {
        let mut g = LabeledDigraph::new(vec!["u".into(), "v".into()], 0, 0.0, 1).unwrap();
        assert!(matches!(
            g.add_edge(1, 0, Jet::one(0.0, 1)),
            Err(SemiMarkovError::StartHasIncoming(0))
        ));
        assert!(matches!(
            g.add_edge(0, 1, Jet::one(0.0, 2)),
            Err(SemiMarkovError::LabelMismatch { .. })
        ));
    }

    #[test]
    fn unit_loop_gain_is_singular() {
        let mut g = LabeledDigraph::new(vec!["u".into(), "v".into()], 0, 0.0, 1).unwrap();
        g.add_edge(0, 1, Jet::one(0.0, 1)).unwrap();
        g.add_edge(1, 1, Jet::one(0.0, 1)).unwrap();
        assert!(matches!(
            transfer_functions(&g),
            Err(SemiMarkovError::SingularSystem { .. })
        ));
    }

    #[test]
    fn kit_probabilities() {
        let cfg = SystemConfig::new(
            vec![2.0, 6.0],
            0.5,
            ServiceDistribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let kit = sojourn_kit(&cfg, 4).unwrap();
        assert!((kit.sources[0].p_race - 0.25).abs() < 1e-15);
        assert!((kit.sources[0].p_deliver - 0.5).abs() < 1e-15);
        for s in &kit.sources {
            assert!((s.p_deliver + s.p_preempt - 1.0).abs() < 1e-14);
            assert!((s.deliver_mgf.value() - 1.0).abs() < 1e-15);
            assert!((s.preempt_mgf.value() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_shapes() {
        let dist = ServiceDistribution::exponential(1.0).unwrap();
        let one = SystemConfig::new(vec![1.0], 0.5, dist).unwrap();
        let g = build_interdeparture_graph(&one, 0, 3).unwrap();
        assert_eq!(g.node_count(), 4);
        let h = transfer_functions(&g).unwrap();
        let idle = g.node(NODE_OTHER_DELIVERED).unwrap();
        assert_eq!(h[idle], Jet::zero(0.0, 3));

        let two = SystemConfig::new(vec![1.0, 1.0], 0.5, dist).unwrap();
        let g = build_interdeparture_graph(&two, 0, 3).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.edges().len(), 8);
    }

    #[test]
    fn single_source_closed_form() {
        let cfg = SystemConfig::new(
            vec![1.5],
            0.3,
            ServiceDistribution::gamma(2.0, 2.0).unwrap(),
        )
        .unwrap();
        let k = &sojourn_kit(&cfg, 6).unwrap().sources[0];
        let num = k
            .race_mgf
            .try_mul(&k.deliver_mgf)
            .unwrap()
            .scale(k.p_race * k.p_deliver);
        let den = k.preempt_mgf.scale(k.p_preempt).rsub_scalar(1.0);
        let want = num.try_div(&den).unwrap();
        let got = interdeparture_via_graph(&cfg, 0, 6).unwrap();
        assert!(got.max_relative_diff(&want) < 1e-13);
    }

    #[test]
    fn graph_matches_closed_form_two_sources() {
        let cfg = SystemConfig::new(
            vec![1.0, 1.0],
            0.5,
            ServiceDistribution::exponential(1.0).unwrap(),
        )
        .unwrap();
        let g = interdeparture_via_graph(&cfg, 0, 8).unwrap();
        let f = interdeparture_mgf_jet(&cfg, 0, 8).unwrap();
        assert!(g.max_relative_diff(&f) < 1e-9);
    }
}
