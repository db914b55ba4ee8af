use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRef {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    /// Every sample of `channel` lies in `[lo, hi]`.
    Bound { channel: ChannelRef, lo: f64, hi: f64 },
    /// Every one-step difference of `channel` lies in `[-max_abs_slope, max_abs_slope]`.
    RateBound { channel: ChannelRef, max_abs_slope: f64 },
    /// Pearson correlation of `a` and `b` over the window is at least `min_corr`.
    Corr { a: ChannelRef, b: ChannelRef, min_corr: f64 },
}

impl Atom {
    pub fn channels(&self) -> Vec<&ChannelRef> {
        match self {
            Atom::Bound { channel, .. } | Atom::RateBound { channel, .. } => vec![channel],
            Atom::Corr { a, b, .. } => vec![a, b],
        }
    }

    /// Interval of acceptable observed values, in the atom's own terms
    /// (sample value, slope, or correlation).
    pub fn acceptable(&self) -> (f64, f64) {
        match *self {
            Atom::Bound { lo, hi, .. } => (lo, hi),
            Atom::RateBound { max_abs_slope, .. } => (-max_abs_slope, max_abs_slope),
            Atom::Corr { min_corr, .. } => (min_corr, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Atom(Atom),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            Expr::Atom(a) => out.push(a),
            Expr::Not(e) => e.collect_atoms(out),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Implies(..) => 1,
            Expr::Or(..) => 2,
            Expr::And(..) => 3,
            Expr::Not(_) | Expr::Atom(_) => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.precedence();
        if p < min {
            f.write_str("(")?;
        }
        match self {
            Expr::Atom(a) => write!(f, "{a}")?,
            Expr::Not(e) => {
                f.write_str("NOT ")?;
                e.fmt_prec(f, 4)?;
            }
            // AND/OR are left-associative, IMPLIES right-associative
            Expr::And(a, b) => {
                a.fmt_prec(f, 3)?;
                f.write_str(" AND ")?;
                b.fmt_prec(f, 4)?;
            }
            Expr::Or(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str(" OR ")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Implies(a, b) => {
                a.fmt_prec(f, 2)?;
                f.write_str(" IMPLIES ")?;
                b.fmt_prec(f, 1)?;
            }
        }
        if p < min {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Bound { channel, lo, hi } => write!(f, "bound({}, {lo}, {hi})", channel.name),
            Atom::RateBound {
                channel,
                max_abs_slope,
            } => write!(f, "rate_bound({}, {max_abs_slope})", channel.name),
            Atom::Corr { a, b, min_corr } => write!(f, "corr({}, {}, {min_corr})", a.name, b.name),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axiom {
    pub name: String,
    pub expr: Expr,
}

impl Axiom {
    /// Distinct channel indices referenced by the axiom, in first-use order.
    pub fn channels(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for atom in self.expr.atoms() {
            for c in atom.channels() {
                if !out.contains(&c.index) {
                    out.push(c.index);
                }
            }
        }
        out
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "axiom {}: {};", self.name, self.expr)
    }
}
