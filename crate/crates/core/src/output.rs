//! Plain-text emitters: trajectory CSV, density grid dumps, ensemble
//! checkpoints and cost histories. Every real number is printed with nine
//! significant digits.

use std::io::{self, Write};

use crate::micro::CrowdState;

/// Formats like C's `%.9g`.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{}e{}{:02}", m, if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

/// Streams one row per agent per recorded step:
/// `step,id,kind,x,y,vx,vy,evacuated`.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "step,id,kind,x,y,vx,vy,evacuated")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, state: &CrowdState) -> io::Result<()> {
        for (i, f) in state.followers.iter().enumerate() {
            writeln!(
                self.out,
                "{},{},F,{},{},{},{},{}",
                state.step,
                i,
                fmt9(f.position.x),
                fmt9(f.position.y),
                fmt9(f.velocity.x),
                fmt9(f.velocity.y),
                u8::from(f.evacuated)
            )?;
        }
        for (k, l) in state.leaders.iter().enumerate() {
            writeln!(
                self.out,
                "{},{},L,{},{},{},{},{}",
                state.step,
                k,
                fmt9(l.position.x),
                fmt9(l.position.y),
                fmt9(l.velocity.x),
                fmt9(l.velocity.y),
                u8::from(l.evacuated)
            )?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
