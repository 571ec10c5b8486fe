//! Co-simulation topology: which output feeds which input, subsystem
//! topology tags, and bounded per-output sample histories.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SequencingError;

/// Highest polynomial order used for estimated outputs and plain inputs.
pub const MAX_ORDER: usize = 2;

/// Samples retained per output: order selection at `MAX_ORDER` reads
/// `MAX_ORDER + 1` past points plus the newest one, and so does CLS.
pub const HISTORY_CAPACITY: usize = MAX_ORDER + 2;

/// Shape of a subsystem with respect to coupling variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyTag {
    /// No inputs, at least one output.
    NI,
    /// At least one input, no outputs.
    NO,
    /// Neither inputs nor outputs.
    NINO,
    /// Inputs and outputs.
    IO,
}

impl TopologyTag {
    pub fn has_outputs(self) -> bool {
        matches!(self, TopologyTag::NI | TopologyTag::IO)
    }
}

impl fmt::Display for TopologyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TopologyTag::NI => "NI",
            TopologyTag::NO => "NO",
            TopologyTag::NINO => "NINO",
            TopologyTag::IO => "IO",
        };
        f.write_str(s)
    }
}

pub fn classify(n_in: usize, n_out: usize) -> TopologyTag {
    match (n_in, n_out) {
        (0, 0) => TopologyTag::NINO,
        (0, _) => TopologyTag::NI,
        (_, 0) => TopologyTag::NO,
        _ => TopologyTag::IO,
    }
}

/// Reference to one coupling variable: port `port` of subsystem `system`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Port {
    pub system: usize,
    pub port: usize,
}

impl Port {
    pub const fn new(system: usize, port: usize) -> Self {
        Self { system, port }
    }
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.system, self.port)
    }
}

/// A single `input <- output` connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub input: Port,
    pub output: Port,
}

/// Problems found by [`CouplingGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    UnfedInput { input: Port },
    MultiplyFedInput { input: Port, count: usize },
    BadTarget { input: Port, output: Port },
    BadSource { input: Port },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnfedInput { input } => write!(f, "unfed input {input}"),
            Diagnostic::MultiplyFedInput { input, count } => {
                write!(f, "input {input} fed by {count} outputs")
            }
            Diagnostic::BadTarget { input, output } => {
                write!(f, "bad target: input {input} linked to missing output {output}")
            }
            Diagnostic::BadSource { input } => write!(f, "bad source: no such input {input}"),
        }
    }
}

/// Subsystem arities plus the link function `(k, i) -> (l, j)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingGraph {
    n_in: Vec<usize>,
    n_out: Vec<usize>,
    links: Vec<Link>,
}

impl CouplingGraph {
    pub fn new(arities: &[(usize, usize)]) -> Self {
        Self {
            n_in: arities.iter().map(|a| a.0).collect(),
            n_out: arities.iter().map(|a| a.1).collect(),
            links: Vec::new(),
        }
    }

    /// Feeds input `input_port` of `consumer` from output `output_port` of `producer`.
    pub fn connect(
        mut self,
        consumer: usize,
        input_port: usize,
        producer: usize,
        output_port: usize,
    ) -> Self {
        self.links.push(Link {
            input: Port::new(consumer, input_port),
            output: Port::new(producer, output_port),
        });
        self
    }

    pub fn n_sys(&self) -> usize {
        self.n_in.len()
    }

    pub fn n_in(&self, k: usize) -> usize {
        self.n_in[k]
    }

    pub fn n_out(&self, k: usize) -> usize {
        self.n_out[k]
    }

    pub fn topology(&self, k: usize) -> TopologyTag {
        classify(self.n_in[k], self.n_out[k])
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Output feeding input `i` of subsystem `k`, if any.
    pub fn source_of(&self, k: usize, i: usize) -> Option<Port> {
        self.links
            .iter()
            .find(|l| l.input == Port::new(k, i))
            .map(|l| l.output)
    }

    /// Distinct subsystems feeding at least one input of `k`, ascending.
    pub fn producers_of(&self, k: usize) -> Vec<usize> {
        let mut p: Vec<usize> = self
            .links
            .iter()
            .filter(|l| l.input.system == k)
            .map(|l| l.output.system)
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }

    /// Every violation of "each input fed by exactly one existing output".
    pub fn validate(&self) -> Result<(), Vec<Diagnostic>> {
        let mut diags = Vec::new();
        for link in &self.links {
            let Link { input, output } = *link;
            if input.system >= self.n_sys() || input.port >= self.n_in[input.system] {
                diags.push(Diagnostic::BadSource { input });
                continue;
            }
            if output.system >= self.n_sys() || output.port >= self.n_out[output.system] {
                diags.push(Diagnostic::BadTarget { input, output });
            }
        }
        for k in 0..self.n_sys() {
            for i in 0..self.n_in[k] {
                let port = Port::new(k, i);
                let count = self.links.iter().filter(|l| l.input == port).count();
                match count {
                    0 => diags.push(Diagnostic::UnfedInput { input: port }),
                    1 => {}
                    _ => diags.push(Diagnostic::MultiplyFedInput { input: port, count }),
                }
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(diags)
        }
    }
}

/// Bounded, strictly time-ordered record of one output's exchanged values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleHistory {
    samples: VecDeque<(f64, f64)>,
}

impl SampleHistory {
    pub fn new() -> Self {
        Self {
            samples: VecDeque::with_capacity(HISTORY_CAPACITY),
        }
    }

    /// Appends a sample, evicting the oldest beyond capacity.
    pub fn push(&mut self, t: f64, y: f64) -> Result<(), SequencingError> {
        if let Some(&(last, _)) = self.samples.back() {
            if !(t > last) {
                return Err(SequencingError::NonIncreasingTime { time: t, last });
            }
        }
        if self.samples.len() == HISTORY_CAPACITY {
            self.samples.pop_front();
        }
        self.samples.push_back((t, y));
        Ok(())
    }

    /// Value-style variant of [`SampleHistory::push`].
    pub fn push_sample(mut self, t: f64, y: f64) -> Result<Self, SequencingError> {
        self.push(t, y)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn newest(&self) -> Option<(f64, f64)> {
        self.samples.back().copied()
    }

    /// The `count` most recent samples, oldest first.
    pub fn latest(&self, count: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let skip = self.samples.len().saturating_sub(count);
        self.samples.iter().skip(skip).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().copied()
    }
}
