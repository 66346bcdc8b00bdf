//! Thompson NFA construction and subset-construction determinization.
//!
//! The alphabet is compressed to byte equivalence classes before
//! determinizing, so transition tables stay small even though string-slot
//! rules touch nearly all 256 bytes. Dead states (those that cannot reach
//! an accepting state) are pruned; a missing transition is the implicit
//! dead state `DEAD`.

use std::collections::HashMap;

use super::pattern::{Ast, ByteSet};

pub const DEAD: u32 = u32::MAX;

/// Where a state sits relative to the template: inside a static segment,
/// inside a literal slot, or on a boundary shared by both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Segment(u16),
    Slot(u16),
    Mixed,
}

struct NfaState {
    eps: Vec<u32>,
    trans: Vec<(ByteSet, u32)>,
    region: Region,
}

pub struct Nfa {
    states: Vec<NfaState>,
    start: u32,
    accept: u32,
}

impl Nfa {
    /// Build one NFA from tagged pieces concatenated in order.
    pub fn concat_pieces(pieces: &[(Ast, Region)]) -> Nfa {
        let mut nfa = Nfa { states: Vec::new(), start: 0, accept: 0 };
        let start = nfa.new_state(Region::Mixed);
        nfa.start = start;
        let mut cur = start;
        for (ast, region) in pieces {
            let (s, a) = nfa.build(ast, *region);
            nfa.states[cur as usize].eps.push(s);
            cur = a;
        }
        nfa.accept = cur;
        nfa
    }

    fn new_state(&mut self, region: Region) -> u32 {
        self.states.push(NfaState { eps: Vec::new(), trans: Vec::new(), region });
        (self.states.len() - 1) as u32
    }

    fn build(&mut self, ast: &Ast, region: Region) -> (u32, u32) {
        match ast {
            Ast::Epsilon => {
                let s = self.new_state(region);
                (s, s)
            }
            Ast::Bytes(bytes) => {
                let s = self.new_state(region);
                let mut cur = s;
                for &b in bytes {
                    let nxt = self.new_state(region);
                    self.states[cur as usize].trans.push((ByteSet::single(b), nxt));
                    cur = nxt;
                }
                (s, cur)
            }
            Ast::Class(set) => {
                let s = self.new_state(region);
                let a = self.new_state(region);
                self.states[s as usize].trans.push((*set, a));
                (s, a)
            }
            Ast::Concat(items) => {
                let s = self.new_state(region);
                let mut cur = s;
                for item in items {
                    let (is, ia) = self.build(item, region);
                    self.states[cur as usize].eps.push(is);
                    cur = ia;
                }
                (s, cur)
            }
            Ast::Alt(arms) => {
                let s = self.new_state(region);
                let a = self.new_state(region);
                for arm in arms {
                    let (is, ia) = self.build(arm, region);
                    self.states[s as usize].eps.push(is);
                    self.states[ia as usize].eps.push(a);
                }
                (s, a)
            }
            Ast::Star(inner) => {
                let s = self.new_state(region);
                let a = self.new_state(region);
                let (is, ia) = self.build(inner, region);
                self.states[s as usize].eps.push(is);
                self.states[s as usize].eps.push(a);
                self.states[ia as usize].eps.push(is);
                self.states[ia as usize].eps.push(a);
                (s, a)
            }
            Ast::Plus(inner) => {
                let s = self.new_state(region);
                let a = self.new_state(region);
                let (is, ia) = self.build(inner, region);
                self.states[s as usize].eps.push(is);
                self.states[ia as usize].eps.push(is);
                self.states[ia as usize].eps.push(a);
                (s, a)
            }
            Ast::Opt(inner) => {
                let s = self.new_state(region);
                let a = self.new_state(region);
                let (is, ia) = self.build(inner, region);
                self.states[s as usize].eps.push(is);
                self.states[s as usize].eps.push(a);
                self.states[ia as usize].eps.push(a);
                (s, a)
            }
        }
    }
}

pub struct Dfa {
    pub byte_class: Box<[u16; 256]>,
    pub num_classes: u16,
    pub start: u32,
    /// Dense table, `state * num_classes + class`; `DEAD` where missing.
    pub table: Vec<u32>,
    pub accepting: Vec<bool>,
    pub regions: Vec<Region>,
    /// Minimum bytes from each state to an accepting state (0 if accepting).
    pub distances: Vec<u32>,
}

impl Dfa {
    pub fn num_states(&self) -> usize {
        self.accepting.len()
    }

    pub fn step(&self, state: u32, byte: u8) -> u32 {
        let class = self.byte_class[byte as usize] as usize;
        self.table[state as usize * self.num_classes as usize + class]
    }

    /// Class-indexed successors of a state.
    pub fn row(&self, state: u32) -> &[u32] {
        let n = self.num_classes as usize;
        &self.table[state as usize * n..(state as usize + 1) * n]
    }
}

/// Determinize. Returns `None` when the language is empty (the start state
/// cannot reach acceptance).
pub fn determinize(nfa: &Nfa) -> Option<Dfa> {
    // Alphabet compression: refine {0..255} by every atom set in the NFA.
    let mut atoms: Vec<ByteSet> = Vec::new();
    for st in &nfa.states {
        for (set, _) in &st.trans {
            if !atoms.contains(set) {
                atoms.push(*set);
            }
        }
    }
    let mut classes: Vec<ByteSet> = vec![ByteSet::full()];
    for atom in &atoms {
        let mut next = Vec::with_capacity(classes.len() + 1);
        for c in &classes {
            let inside = c.intersect(atom);
            let outside = c.subtract(atom);
            if !inside.is_empty() {
                next.push(inside);
            }
            if !outside.is_empty() {
                next.push(outside);
            }
        }
        classes = next;
    }
    let num_classes = classes.len() as u16;
    let mut byte_class = Box::new([0u16; 256]);
    let mut representative = vec![0u8; classes.len()];
    for (ci, c) in classes.iter().enumerate() {
        for b in 0..=255u8 {
            if c.contains(b) {
                byte_class[b as usize] = ci as u16;
                representative[ci] = b;
            }
        }
    }

    let closure = |seed: Vec<u32>| -> Vec<u32> {
        let mut seen: Vec<u32> = seed;
        let mut stack = seen.clone();
        while let Some(s) = stack.pop() {
            for &e in &nfa.states[s as usize].eps {
                if !seen.contains(&e) {
                    seen.push(e);
                    stack.push(e);
                }
            }
        }
        seen.sort_unstable();
        seen.dedup();
        seen
    };

    let start_set = closure(vec![nfa.start]);
    let mut subset_ids: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut subsets: Vec<Vec<u32>> = vec![start_set.clone()];
    subset_ids.insert(start_set, 0);
    let mut table: Vec<u32> = Vec::new();
    let mut queue = 0usize;
    while queue < subsets.len() {
        let current = subsets[queue].clone();
        let base = table.len();
        table.resize(base + num_classes as usize, DEAD);
        for (ci, &rep) in representative.iter().enumerate() {
            let mut targets: Vec<u32> = Vec::new();
            for &s in &current {
                for (set, t) in &nfa.states[s as usize].trans {
                    if set.contains(rep) {
                        targets.push(*t);
                    }
                }
            }
            if targets.is_empty() {
                continue;
            }
            let closed = closure(targets);
            let id = match subset_ids.get(&closed) {
                Some(&id) => id,
                None => {
                    let id = subsets.len() as u32;
                    subsets.push(closed.clone());
                    subset_ids.insert(closed, id);
                    id
                }
            };
            table[base + ci] = id;
        }
        queue += 1;
    }

    let accepting: Vec<bool> =
        subsets.iter().map(|s| s.binary_search(&nfa.accept).is_ok()).collect();
    let regions: Vec<Region> = subsets
        .iter()
        .map(|s| {
            let mut region: Option<Region> = None;
            for &st in s {
                let r = nfa.states[st as usize].region;
                region = match region {
                    None => Some(r),
                    Some(prev) if prev == r => Some(prev),
                    Some(_) => Some(Region::Mixed),
                };
            }
            region.unwrap_or(Region::Mixed)
        })
        .collect();

    // Prune states that cannot reach acceptance (distance stays MAX).
    let n = subsets.len();
    let distances = accept_distances(&table, &accepting, num_classes);
    if distances[0] == u32::MAX {
        return None;
    }

    let mut remap = vec![DEAD; n];
    let mut kept = 0u32;
    for (i, &d) in distances.iter().enumerate() {
        if d != u32::MAX {
            remap[i] = kept;
            kept += 1;
        }
    }
    let mut new_table = vec![DEAD; kept as usize * num_classes as usize];
    let mut new_accepting = vec![false; kept as usize];
    let mut new_regions = vec![Region::Mixed; kept as usize];
    let mut new_distances = vec![0u32; kept as usize];
    for (i, &d) in distances.iter().enumerate() {
        if d == u32::MAX {
            continue;
        }
        let ni = remap[i] as usize;
        new_accepting[ni] = accepting[i];
        new_regions[ni] = regions[i];
        new_distances[ni] = d;
        for ci in 0..num_classes as usize {
            let t = table[i * num_classes as usize + ci];
            new_table[ni * num_classes as usize + ci] =
                if t == DEAD || distances[t as usize] == u32::MAX {
                    DEAD
                } else {
                    remap[t as usize]
                };
        }
    }

    Some(Dfa {
        byte_class,
        num_classes,
        start: remap[0],
        table: new_table,
        accepting: new_accepting,
        regions: new_regions,
        distances: new_distances,
    })
}

/// Reverse BFS from accepting states: minimum bytes to acceptance, or MAX
/// for dead states.
pub fn accept_distances(table: &[u32], accepting: &[bool], num_classes: u16) -> Vec<u32> {
    let n = accepting.len();
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
    for s in 0..n {
        for ci in 0..num_classes as usize {
            let t = table[s * num_classes as usize + ci];
            if t != DEAD {
                preds[t as usize].push(s as u32);
            }
        }
    }
    let mut dist = vec![u32::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for (i, &acc) in accepting.iter().enumerate() {
        if acc {
            dist[i] = 0;
            queue.push_back(i as u32);
        }
    }
    while let Some(s) = queue.pop_front() {
        for &p in &preds[s as usize] {
            if dist[p as usize] == u32::MAX {
                dist[p as usize] = dist[s as usize] + 1;
                queue.push_back(p);
            }
        }
    }
    dist
}
