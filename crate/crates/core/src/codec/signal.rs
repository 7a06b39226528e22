//! Intra mode signalling: MPM derivation and the three codeword schemes.
//!
//! Switch scheme codewords:
//!
//! | mode          | codeword      |
//! |---------------|---------------|
//! | neural        | `1`           |
//! | MPM 1         | `010`         |
//! | MPM 2         | `0110`        |
//! | MPM 3         | `0111`        |
//! | other         | `00` + 5 bits |
//!
//! Baseline and substitution use `1` + truncated unary MPM index, or `0` + 5
//! bits. Under substitution the neural mode is coded in the slot of mode 18.

use super::bits::{BitReader, BitWriter};
use crate::error::{invalid, Error, Result};
use crate::hevc::{Mode, DC, DIAGONAL, MODE_COUNT, PLANAR, VERTICAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// The 35 H.265 modes only.
    Baseline,
    /// The neural predictor replaces mode 18.
    Substitution,
    /// The neural predictor is added with its own 1-bit codeword.
    Switch,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Baseline, Scheme::Substitution, Scheme::Switch];

    pub fn code(self) -> u8 {
        match self {
            Scheme::Baseline => 0,
            Scheme::Substitution => 1,
            Scheme::Switch => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Scheme> {
        match code {
            0 => Ok(Scheme::Baseline),
            1 => Ok(Scheme::Substitution),
            2 => Ok(Scheme::Switch),
            _ => Err(Error::CorruptBitstream(format!("unknown scheme code {code}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::Substitution => "substitution",
            Scheme::Switch => "switch",
        }
    }

    pub fn uses_pnns(self) -> bool {
        self != Scheme::Baseline
    }

    /// H.265 modes that take part in the fast stage.
    pub fn hevc_candidates(self) -> Vec<u8> {
        (0..MODE_COUNT).filter(|&m| self != Scheme::Substitution || m != DIAGONAL).collect()
    }

    /// Whether `mode` may be coded under this scheme.
    pub fn allows(self, mode: Mode) -> bool {
        match (self, mode) {
            (Scheme::Baseline, Mode::Pnns) => false,
            (Scheme::Substitution, Mode::Hevc(DIAGONAL)) => false,
            (_, Mode::Hevc(i)) => i < MODE_COUNT,
            _ => true,
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scheme> {
        match s {
            "baseline" | "baseline-35" => Ok(Scheme::Baseline),
            "substitution" => Ok(Scheme::Substitution),
            "switch" => Ok(Scheme::Switch),
            _ => Err(invalid!("unknown signalling scheme {s:?}")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Index used on the wire; the neural mode takes slot 18 outside the switch scheme.
fn wire_index(mode: Mode) -> u8 {
    match mode {
        Mode::Pnns => DIAGONAL,
        Mode::Hevc(i) => i,
    }
}

fn from_wire(index: u8, scheme: Scheme) -> Mode {
    if scheme == Scheme::Substitution && index == DIAGONAL {
        Mode::Pnns
    } else {
        Mode::Hevc(index)
    }
}

/// The three most probable modes given the left and above neighbors
/// (`None` when absent, which counts as DC).
pub fn derive_mpm(left: Option<Mode>, above: Option<Mode>, scheme: Scheme) -> [u8; 3] {
    let priority = [PLANAR, DC, VERTICAL];
    let resolve = |m: Option<Mode>| match (m, scheme) {
        (None, _) => Some(DC),
        (Some(Mode::Pnns), Scheme::Switch) => None,
        (Some(m), _) => Some(wire_index(m)),
    };
    let (a, b) = (resolve(left), resolve(above));
    if a == b {
        return match a {
            Some(a) if a >= 2 => [a, 2 + ((a + 29) % 32), 2 + ((a - 2 + 1) % 32)],
            _ => priority,
        };
    }
    // switch scheme: a neural neighbor is replaced by the first of planar, DC, 26 not yet listed
    let mut list: Vec<u8> = Vec::with_capacity(3);
    for (i, slot) in [a, b].into_iter().enumerate() {
        let v = slot.unwrap_or_else(|| {
            let other = if i == 0 { b } else { a };
            *priority
                .iter()
                .find(|p| !list.contains(p) && Some(**p) != other)
                .expect("three candidates, at most two taken")
        });
        list.push(v);
    }
    let third = *priority.iter().find(|p| !list.contains(p)).expect("three candidates, two taken");
    [list[0], list[1], third]
}

/// Codeword length of `mode`.
pub fn mode_bits(mode: Mode, mpm: &[u8; 3], scheme: Scheme) -> u32 {
    match scheme {
        Scheme::Switch => match mode {
            Mode::Pnns => 1,
            Mode::Hevc(i) => match mpm.iter().position(|&p| p == i) {
                Some(0) => 3,
                Some(_) => 4,
                None => 7,
            },
        },
        _ => match mpm.iter().position(|&p| p == wire_index(mode)) {
            Some(0) => 2,
            Some(_) => 3,
            None => 6,
        },
    }
}

/// Position of `index` among the 32 modes that are not MPMs, in ascending order.
fn rank_outside(index: u8, mpm: &[u8; 3]) -> u64 {
    (0..index).filter(|i| !mpm.contains(i)).count() as u64
}

fn unrank_outside(rank: u64, mpm: &[u8; 3]) -> Result<u8> {
    (0..MODE_COUNT)
        .filter(|i| !mpm.contains(i))
        .nth(rank as usize)
        .ok_or_else(|| Error::CorruptBitstream(format!("non-MPM rank {rank} out of range")))
}

pub fn write_mode(w: &mut BitWriter, mode: Mode, mpm: &[u8; 3], scheme: Scheme) -> Result<()> {
    if !scheme.allows(mode) {
        return Err(invalid!("mode {mode} cannot be signalled under the {scheme} scheme"));
    }
    match scheme {
        Scheme::Switch => match mode {
            Mode::Pnns => w.put_bit(true),
            Mode::Hevc(i) => match mpm.iter().position(|&p| p == i) {
                Some(0) => w.put_bits(0b010, 3),
                Some(1) => w.put_bits(0b0110, 4),
                Some(_) => w.put_bits(0b0111, 4),
                None => {
                    w.put_bits(0b00, 2);
                    w.put_bits(rank_outside(i, mpm), 5);
                }
            },
        },
        _ => {
            let i = wire_index(mode);
            match mpm.iter().position(|&p| p == i) {
                Some(0) => w.put_bits(0b10, 2),
                Some(1) => w.put_bits(0b110, 3),
                Some(_) => w.put_bits(0b111, 3),
                None => {
                    w.put_bit(false);
                    w.put_bits(rank_outside(i, mpm), 5);
                }
            }
        }
    }
    Ok(())
}

pub fn read_mode(r: &mut BitReader<'_>, mpm: &[u8; 3], scheme: Scheme) -> Result<Mode> {
    let mode = match scheme {
        Scheme::Switch => {
            if r.bit()? {
                Mode::Pnns
            } else if r.bit()? {
                if !r.bit()? {
                    Mode::Hevc(mpm[0])
                } else if !r.bit()? {
                    Mode::Hevc(mpm[1])
                } else {
                    Mode::Hevc(mpm[2])
                }
            } else {
                Mode::Hevc(unrank_outside(r.bits(5)?, mpm)?)
            }
        }
        _ => {
            let index = if r.bit()? {
                if !r.bit()? {
                    mpm[0]
                } else if !r.bit()? {
                    mpm[1]
                } else {
                    mpm[2]
                }
            } else {
                unrank_outside(r.bits(5)?, mpm)?
            };
            from_wire(index, scheme)
        }
    };
    if !scheme.allows(mode) {
        return Err(Error::CorruptBitstream(format!("mode {mode} is not allowed under the {scheme} scheme")));
    }
    Ok(mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_neighbors() -> Vec<Option<Mode>> {
        let mut v = vec![None, Some(Mode::Pnns)];
        v.extend((0..MODE_COUNT).map(|i| Some(Mode::Hevc(i))));
        v
    }

    #[test]
    fn base_rule_examples() {
        assert_eq!(derive_mpm(Some(Mode::Hevc(DC)), Some(Mode::Hevc(DC)), Scheme::Baseline), [0, 1, 26]);
        assert_eq!(derive_mpm(None, None, Scheme::Baseline), [0, 1, 26]);
        assert_eq!(derive_mpm(Some(Mode::Hevc(10)), Some(Mode::Hevc(10)), Scheme::Baseline), [10, 9, 11]);
        assert_eq!(derive_mpm(Some(Mode::Hevc(2)), Some(Mode::Hevc(2)), Scheme::Baseline), [2, 33, 3]);
        assert_eq!(derive_mpm(Some(Mode::Hevc(34)), Some(Mode::Hevc(34)), Scheme::Baseline), [34, 33, 3]);
        assert_eq!(derive_mpm(Some(Mode::Hevc(0)), Some(Mode::Hevc(26)), Scheme::Baseline), [0, 26, 1]);
        assert_eq!(derive_mpm(Some(Mode::Hevc(5)), Some(Mode::Hevc(7)), Scheme::Baseline), [5, 7, 0]);
    }

    #[test]
    fn neural_neighbor_under_switch() {
        assert_eq!(derive_mpm(Some(Mode::Pnns), Some(Mode::Hevc(PLANAR)), Scheme::Switch), [1, 0, 26]);
        assert_eq!(derive_mpm(Some(Mode::Pnns), Some(Mode::Pnns), Scheme::Switch), [0, 1, 26]);
        assert_eq!(derive_mpm(Some(Mode::Hevc(9)), Some(Mode::Pnns), Scheme::Switch), [9, 0, 1]);
        // under substitution the neural mode sits in slot 18
        assert_eq!(derive_mpm(Some(Mode::Pnns), None, Scheme::Substitution), [18, 1, 0]);
    }

    #[test]
    fn mpm_lists_are_distinct_for_every_pair() {
        for scheme in Scheme::ALL {
            for a in all_neighbors() {
                for b in all_neighbors() {
                    let l = derive_mpm(a, b, scheme);
                    assert!(l[0] != l[1] && l[1] != l[2] && l[0] != l[2], "{a:?} {b:?} {l:?}");
                    assert!(l.iter().all(|&i| i < MODE_COUNT));
                }
            }
        }
    }

    #[test]
    fn every_mode_round_trips() {
        for scheme in Scheme::ALL {
            for a in all_neighbors() {
                for b in all_neighbors() {
                    let mpm = derive_mpm(a, b, scheme);
                    for mode in all_neighbors().into_iter().flatten() {
                        let mut w = BitWriter::new();
                        if !scheme.allows(mode) {
                            assert!(write_mode(&mut w, mode, &mpm, scheme).is_err());
                            continue;
                        }
                        write_mode(&mut w, mode, &mpm, scheme).unwrap();
                        assert_eq!(w.len(), mode_bits(mode, &mpm, scheme) as u64);
                        let mut r = BitReader::new(w.as_bytes());
                        assert_eq!(read_mode(&mut r, &mpm, scheme).unwrap(), mode);
                        assert_eq!(r.position(), w.len());
                    }
                }
            }
        }
    }

    #[test]
    fn switch_codeword_lengths() {
        let mpm = [0, 1, 26];
        let len = |m| mode_bits(m, &mpm, Scheme::Switch);
        assert_eq!(
            [len(Mode::Pnns), len(Mode::Hevc(0)), len(Mode::Hevc(1)), len(Mode::Hevc(26)), len(Mode::Hevc(18))],
            [1, 3, 4, 4, 7]
        );
    }
}
