use std::io::{self, Write};

use super::{AgentAction, ArenaState, FighterState, StepOutcome};

const FIGHTER_COLUMNS: [&str; 13] = [
    "x",
    "y",
    "vx",
    "vy",
    "action_state",
    "action_frame",
    "facing",
    "charging",
    "airborne",
    "shield",
    "jumps_used",
    "hitlag",
    "damage",
];

/// Writes one CSV line per simulated frame.
///
/// Column order: `frame`, the thirteen agent fields prefixed `agent_`, the
/// same thirteen opponent fields prefixed `opponent_`, then `action`,
/// `reward`, `terminal`. Fighter fields follow [`FighterState`] order; the
/// action state is written as its numeric id and facing as -1 / 1. The state
/// written is the one reached at the end of the frame.
pub struct TrajectoryRecorder<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryRecorder<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        let mut header = vec!["frame".to_string()];
        for who in ["agent", "opponent"] {
            header.extend(FIGHTER_COLUMNS.iter().map(|c| format!("{who}_{c}")));
        }
        header.extend(["action", "reward", "terminal"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        Ok(Self { out })
    }

    pub fn record(
        &mut self,
        st: &ArenaState,
        action: AgentAction,
        outcome: &StepOutcome,
    ) -> io::Result<()> {
        write!(self.out, "{}", st.frame)?;
        for f in [&st.agent, &st.opponent] {
            write_fighter(&mut self.out, f)?;
        }
        writeln!(
            self.out,
            ",{},{},{}",
            action.index(),
            outcome.reward,
            u8::from(outcome.terminal)
        )
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

fn write_fighter<W: Write>(out: &mut W, f: &FighterState) -> io::Result<()> {
    write!(
        out,
        ",{},{},{},{},{},{},{},{},{},{},{},{},{}",
        f.x,
        f.y,
        f.vx,
        f.vy,
        f.action_state.id(),
        f.action_frame,
        f.facing.sign(),
        u8::from(f.charging),
        u8::from(f.airborne),
        f.shield,
        f.jumps_used,
        f.hitlag,
        f.damage
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_per_frame() {
        let mut st = ArenaState::reset(9, 0).unwrap();
        let mut rec = TrajectoryRecorder::new(Vec::new()).unwrap();
        for _ in 0..5 {
            let out = st.step(AgentAction::Nothing).unwrap();
            rec.record(&st, AgentAction::Nothing, &out).unwrap();
        }
        let text = String::from_utf8(rec.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0].split(',').count(), 30);
        assert!(lines[0].starts_with("frame,agent_x,agent_y"));
        assert!(lines[1].starts_with("1,-40,0,0,0,0,1,1,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 30));
    }
}
