use super::{ArenaState, FighterState};

/// Length of [`encode_state`]'s output.
pub const FEATURE_COUNT: usize = 26;

/// Thirteen features per fighter, agent first:
///
/// | idx | feature        | scaling        |
/// |-----|----------------|----------------|
/// | 0   | x              | / 100          |
/// | 1   | y              | / 50           |
/// | 2   | vx             | raw            |
/// | 3   | vy             | raw            |
/// | 4   | action state   | id / 10        |
/// | 5   | action frame   | / 60           |
/// | 6   | facing         | -1 left, +1 right |
/// | 7   | charging       | 0 / 1          |
/// | 8   | airborne       | 0 / 1          |
/// | 9   | shield         | / 60           |
/// | 10  | jumps used     | / 2            |
/// | 11  | hitlag         | / 60           |
/// | 12  | damage         | / 100          |
///
/// The opponent occupies indices 13 to 25 in the same order.
pub fn encode_state(st: &ArenaState) -> Vec<f32> {
    let mut out = Vec::with_capacity(FEATURE_COUNT);
    encode_fighter(&st.agent, &mut out);
    encode_fighter(&st.opponent, &mut out);
    out
}

fn encode_fighter(f: &FighterState, out: &mut Vec<f32>) {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    out.extend_from_slice(&[
        (f.x / 100.0) as f32,
        (f.y / 50.0) as f32,
        f.vx as f32,
        f.vy as f32,
        f32::from(f.action_state.id()) / 10.0,
        f.action_frame as f32 / 60.0,
        f.facing.sign() as f32,
        flag(f.charging),
        flag(f.airborne),
        (f.shield / 60.0) as f32,
        f32::from(f.jumps_used) / 2.0,
        f.hitlag as f32 / 60.0,
        (f.damage / 100.0) as f32,
    ]);
}
