//! A deliberately naive token interpreter: pure functions over plain maps,
//! every nondeterministic branch returned as a list of outcomes. Shares no
//! code with the crate under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flavor {
    Guarded,
    Open,
    Buggy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tok {
    pub bal: BTreeMap<usize, u128>,
    pub minted: u128,
}

impl Tok {
    pub fn empty() -> Self {
        Tok {
            bal: BTreeMap::new(),
            minted: 0,
        }
    }

    fn good(&self) -> bool {
        self.bal.values().sum::<u128>() == self.minted
    }
}

pub struct World {
    pub flavor: Flavor,
    pub addrs: usize,
    pub amounts: Vec<u128>,
    pub gas_bound: u64,
    pub minter: usize,
}

/// One way a piece of code can run: resulting token, remaining gas,
/// whether it succeeded, whether any check failed on the way, and the
/// decisions it read.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub tok: Tok,
    pub gas: u64,
    pub ok: bool,
    pub bad: bool,
    pub tape: Vec<u64>,
}

/// Top-level call as plain data: (is_mint, from, to, amount index, sender, gas).
pub type Plain = (bool, usize, usize, usize, usize, u64);

fn dec(g: u64) -> u64 {
    g.saturating_sub(1)
}

impl World {
    fn exit(&self, mut leaf: Leaf) -> Leaf {
        leaf.bad |= !leaf.tok.good();
        leaf
    }

    fn fail(&self, tok: &Tok, gas: u64) -> Leaf {
        self.exit(Leaf {
            tok: tok.clone(),
            gas: dec(gas),
            ok: false,
            bad: false,
            tape: vec![],
        })
    }

    pub fn transfer(&self, tok: &Tok, from: usize, to: usize, amount: u128, sender: usize, gas: u64) -> Vec<Leaf> {
        let held = match tok.bal.get(&from) {
            Some(b) => *b,
            None => return vec![self.fail(tok, gas)],
        };
        let dest = tok.bal.get(&to).copied().unwrap_or(0);
        if gas == 0 || sender != from || held < amount || dest.checked_add(amount).is_none() {
            return vec![self.fail(tok, gas)];
        }
        let g = gas - 1;
        let left = held - amount;
        match self.flavor {
            Flavor::Guarded | Flavor::Open => {
                let mut t = tok.clone();
                t.bal.insert(from, left);
                let d = t.bal.get(&to).copied().unwrap_or(0);
                t.bal.insert(to, d + amount);
                if self.flavor == Flavor::Guarded {
                    return vec![self.exit(Leaf {
                        tok: t,
                        gas: g,
                        ok: true,
                        bad: false,
                        tape: vec![],
                    })];
                }
                let site_bad = !t.good();
                self.external(&t, g)
                    .into_iter()
                    .map(|l| {
                        self.exit(Leaf {
                            gas: dec(l.gas),
                            ok: true,
                            bad: l.bad || site_bad,
                            ..l
                        })
                    })
                    .collect()
            }
            Flavor::Buggy => {
                let mut t = tok.clone();
                t.bal.insert(to, dest + amount);
                let site_bad = !t.good();
                self.external(&t, g)
                    .into_iter()
                    .map(|mut l| {
                        l.tok.bal.insert(from, left);
                        self.exit(Leaf {
                            gas: dec(l.gas),
                            ok: true,
                            bad: l.bad || site_bad,
                            ..l
                        })
                    })
                    .collect()
            }
        }
    }

    pub fn mint(&self, tok: &Tok, to: usize, amount: u128, sender: usize, gas: u64) -> Vec<Leaf> {
        let dest = tok.bal.get(&to).copied().unwrap_or(0);
        if gas == 0 || sender != self.minter || dest.checked_add(amount).is_none() {
            return vec![self.fail(tok, gas)];
        }
        let mut t = tok.clone();
        t.bal.insert(to, dest + amount);
        t.minted += amount;
        vec![self.exit(Leaf {
            tok: t,
            gas: gas - 1,
            ok: true,
            bad: false,
            tape: vec![],
        })]
    }

    fn prepend(tape: &[u64], leaves: Vec<Leaf>) -> Vec<Leaf> {
        leaves
            .into_iter()
            .map(|mut l| {
                let mut t = tape.to_vec();
                t.extend(l.tape);
                l.tape = t;
                l
            })
            .collect()
    }

    /// The adversary: every behavior an external call with `gas` can have.
    pub fn external(&self, tok: &Tok, gas: u64) -> Vec<Leaf> {
        let mut first = Vec::new();
        let ks: Vec<u64> = if gas >= 1 { vec![0, 1, 2] } else { vec![2] };
        for k in ks {
            match k {
                0 => {
                    for f in 0..self.addrs {
                        for t in 0..self.addrs {
                            for a in 0..self.amounts.len() {
                                for s in 0..self.addrs {
                                    let leaves = self.transfer(tok, f, t, self.amounts[a], s, gas - 1);
                                    let pre = [0, f as u64, t as u64, a as u64, s as u64, 0];
                                    first.extend(Self::prepend(&pre, leaves));
                                }
                            }
                        }
                    }
                }
                1 => {
                    for t in 0..self.addrs {
                        for a in 0..self.amounts.len() {
                            for s in 0..self.addrs {
                                let leaves = self.mint(tok, t, self.amounts[a], s, gas - 1);
                                let pre = [1, t as u64, a as u64, s as u64, 0];
                                first.extend(Self::prepend(&pre, leaves));
                            }
                        }
                    }
                }
                _ => first.push(Leaf {
                    tok: tok.clone(),
                    gas,
                    ok: true,
                    bad: false,
                    tape: vec![2],
                }),
            }
        }
        let mut out = Vec::new();
        for l in first {
            let bs: Vec<u64> = if l.gas >= 1 { vec![0, 1] } else { vec![0] };
            for b in bs {
                let mut head = l.tape.clone();
                head.push(b);
                if b == 1 {
                    let rest = self.external(&l.tok, l.gas - 1);
                    out.extend(Self::prepend(&head, rest).into_iter().map(|r| Leaf {
                        bad: r.bad || l.bad,
                        ..r
                    }));
                } else {
                    head.push(0);
                    out.push(Leaf {
                        tok: l.tok.clone(),
                        gas: dec(l.gas),
                        ok: true,
                        bad: l.bad,
                        tape: head,
                    });
                }
            }
        }
        out
    }

    pub fn top_calls(&self) -> Vec<Plain> {
        let mut v = Vec::new();
        for f in 0..self.addrs {
            for t in 0..self.addrs {
                for a in 0..self.amounts.len() {
                    for s in 0..self.addrs {
                        for g in 1..=self.gas_bound {
                            v.push((false, f, t, a, s, g));
                        }
                    }
                }
            }
        }
        for t in 0..self.addrs {
            for a in 0..self.amounts.len() {
                for s in 0..self.addrs {
                    for g in 1..=self.gas_bound {
                        v.push((true, 0, t, a, s, g));
                    }
                }
            }
        }
        v
    }

    pub fn run(&self, tok: &Tok, c: Plain) -> Vec<Leaf> {
        let (is_mint, f, t, a, s, g) = c;
        let leaves = if is_mint {
            self.mint(tok, t, self.amounts[a], s, g)
        } else {
            self.transfer(tok, f, t, self.amounts[a], s, g)
        };
        leaves
            .into_iter()
            .map(|l| {
                let tok = if l.ok { l.tok } else { tok.clone() };
                let bad = l.bad || !tok.good();
                Leaf { tok, bad, ..l }
            })
            .collect()
    }
}

/// Result of exhaustively running every schedule of `depth` transactions.
#[derive(Debug, PartialEq, Eq)]
pub enum Summary {
    Clean(u64),
    /// First failing schedule in exploration order.
    Broken(Vec<(Plain, Vec<u64>)>),
}

pub fn schedules(w: &World, tok: &Tok, depth: usize) -> Summary {
    let mut path = Vec::new();
    match walk(w, tok, depth, &mut path) {
        Ok(n) => Summary::Clean(n),
        Err(p) => Summary::Broken(p),
    }
}

fn walk(w: &World, tok: &Tok, depth: usize, path: &mut Vec<(Plain, Vec<u64>)>) -> Result<u64, Vec<(Plain, Vec<u64>)>> {
    let mut n = 0;
    for c in w.top_calls() {
        for l in w.run(tok, c) {
            path.push((c, l.tape.clone()));
            if l.bad {
                return Err(path.clone());
            }
            n += if depth > 1 { walk(w, &l.tok, depth - 1, path)? } else { 1 };
            path.pop();
        }
    }
    Ok(n)
}
