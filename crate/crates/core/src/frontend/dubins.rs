//! Shortest bounded-curvature paths between planar poses (Dubins curves).

use std::f64::consts::TAU;

use crate::terrain_map::SE2State;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Left,
    Straight,
    Right,
}

const WORDS: [[Segment; 3]; 6] = {
    use Segment::*;
    [
        [Left, Straight, Left],
        [Right, Straight, Right],
        [Left, Straight, Right],
        [Right, Straight, Left],
        [Right, Left, Right],
        [Left, Right, Left],
    ]
};

fn mod2pi(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub start: SE2State,
    pub radius: f64,
    pub word: [Segment; 3],
    /// Segment lengths normalized by the radius.
    pub params: [f64; 3],
}

/// Normalized segment lengths for one word, if it exists.
fn word_params(index: usize, alpha: f64, beta: f64, d: f64) -> Option<[f64; 3]> {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let c_ab = (alpha - beta).cos();
    match index {
        0 => {
            let p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sa - sb);
            if p_sq < 0.0 {
                return None;
            }
            let tmp = (cb - ca).atan2(d + sa - sb);
            Some([mod2pi(tmp - alpha), p_sq.sqrt(), mod2pi(beta - tmp)])
        }
        1 => {
            let p_sq = 2.0 + d * d - 2.0 * c_ab + 2.0 * d * (sb - sa);
            if p_sq < 0.0 {
                return None;
            }
            let tmp = (ca - cb).atan2(d - sa + sb);
            Some([mod2pi(alpha - tmp), p_sq.sqrt(), mod2pi(tmp - beta)])
        }
        2 => {
            let p_sq = -2.0 + d * d + 2.0 * c_ab + 2.0 * d * (sa + sb);
            if p_sq < 0.0 {
                return None;
            }
            let p = p_sq.sqrt();
            let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
            Some([mod2pi(tmp - alpha), p, mod2pi(tmp - mod2pi(beta))])
        }
        3 => {
            let p_sq = -2.0 + d * d + 2.0 * c_ab - 2.0 * d * (sa + sb);
            if p_sq < 0.0 {
                return None;
            }
            let p = p_sq.sqrt();
            let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
            Some([mod2pi(alpha - tmp), p, mod2pi(beta - tmp)])
        }
        4 => {
            let tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sa - sb)) / 8.0;
            if tmp.abs() > 1.0 {
                return None;
            }
            let phi = (ca - cb).atan2(d - sa + sb);
            let p = mod2pi(TAU - tmp.acos());
            let t = mod2pi(alpha - phi + mod2pi(p / 2.0));
            Some([t, p, mod2pi(alpha - beta - t + mod2pi(p))])
        }
        _ => {
            let tmp = (6.0 - d * d + 2.0 * c_ab + 2.0 * d * (sb - sa)) / 8.0;
            if tmp.abs() > 1.0 {
                return None;
            }
            let phi = (ca - cb).atan2(d + sa - sb);
            let p = mod2pi(TAU - tmp.acos());
            let t = mod2pi(-alpha - phi + p / 2.0);
            Some([t, p, mod2pi(mod2pi(beta) - alpha - t + mod2pi(p))])
        }
    }
}

impl DubinsPath {
    pub fn shortest(start: SE2State, goal: SE2State, radius: f64) -> Option<Self> {
        let dx = goal.x - start.x;
        let dy = goal.y - start.y;
        let d = dx.hypot(dy) / radius;
        let th = if d > 0.0 { dy.atan2(dx) } else { 0.0 };
        let alpha = mod2pi(start.theta - th);
        let beta = mod2pi(goal.theta - th);
        let mut best: Option<Self> = None;
        for (i, word) in WORDS.iter().enumerate() {
            if let Some(params) = word_params(i, alpha, beta, d) {
                let cand = Self {
                    start,
                    radius,
                    word: *word,
                    params,
                };
                if best.is_none_or(|b| cand.length() < b.length()) {
                    best = Some(cand);
                }
            }
        }
        best
    }

    pub fn length(&self) -> f64 {
        self.params.iter().sum::<f64>() * self.radius
    }

    /// Pose at arc length `s` along the path, clamped to its extent.
    pub fn sample(&self, s: f64) -> SE2State {
        let mut remaining = (s / self.radius).clamp(0.0, self.params.iter().sum());
        let (mut x, mut y, mut th) = (0.0, 0.0, self.start.theta);
        for (seg, &len) in self.word.iter().zip(&self.params) {
            let l = remaining.min(len);
            (x, y, th) = advance(*seg, x, y, th, l);
            remaining -= l;
            if remaining <= 0.0 {
                break;
            }
        }
        SE2State::new(self.start.x + x * self.radius, self.start.y + y * self.radius, th)
    }

    /// Poses spaced at most `step` apart, including both ends.
    pub fn sample_many(&self, step: f64) -> Vec<SE2State> {
        let len = self.length();
        let n = (len / step).ceil().max(1.0) as usize;
        (0..=n).map(|i| self.sample(len * i as f64 / n as f64)).collect()
    }
}

/// Move along one unit-radius segment.
fn advance(seg: Segment, x: f64, y: f64, th: f64, l: f64) -> (f64, f64, f64) {
    match seg {
        Segment::Left => (x + (th + l).sin() - th.sin(), y - (th + l).cos() + th.cos(), th + l),
        Segment::Right => (x - (th - l).sin() + th.sin(), y + (th - l).cos() - th.cos(), th - l),
        Segment::Straight => (x + l * th.cos(), y + l * th.sin(), th),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain_map::wrap_angle;

    fn close(a: SE2State, b: SE2State) -> bool {
        (a.x - b.x).abs() < 1e-9
            && (a.y - b.y).abs() < 1e-9
            && wrap_angle(a.theta - b.theta).abs() < 1e-9
    }

    #[test]
    fn straight_shot() {
        let p = DubinsPath::shortest(SE2State::new(0.0, 0.0, 0.0), SE2State::new(5.0, 0.0, 0.0), 1.0).unwrap();
        assert!((p.length() - 5.0).abs() < 1e-12);
        assert!(close(p.sample(2.5), SE2State::new(2.5, 0.0, 0.0)));
    }

    #[test]
    fn endpoints_reach_goal() {
        let starts = [(0.0, 0.0, 0.3), (1.0, -2.0, 2.9), (-3.0, 0.5, -1.2)];
        let goals = [(4.0, 1.0, -0.7), (1.2, -1.8, 0.0), (-3.0, 0.5, 1.9), (0.5, 3.0, 3.1)];
        for s in starts {
            for g in goals {
                let s = SE2State::new(s.0, s.1, s.2);
                let g = SE2State::new(g.0, g.1, g.2);
                let p = DubinsPath::shortest(s, g, 1.1).unwrap();
                assert!(close(p.sample(p.length()), g), "{s:?} -> {g:?}: {:?}", p.sample(p.length()));
                assert!(p.length() + 1e-9 >= (g.x - s.x).hypot(g.y - s.y));
            }
        }
    }

    #[test]
    fn u_turn_needs_arc() {
        let p = DubinsPath::shortest(SE2State::new(0.0, 0.0, 0.0), SE2State::new(0.0, 0.0, std::f64::consts::PI), 1.0)
            .unwrap();
        assert!(p.length() > 3.0);
    }
}
