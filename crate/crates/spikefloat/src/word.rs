//! Multi-bit integer circuits over gate netlists.
//!
//! Words are little-endian: `bits[0]` is the least significant bit.  All
//! constructions bottom out in the five-gate vocabulary of [`crate::gate`],
//! with one deliberate exception: the carry neuron of the parallel
//! prefix-style adder fuses `G OR (P AND C)` into a single threshold neuron
//! (weights `2, 1, 1`, threshold `1.5`), which is what buys its depth
//! advantage over the ripple adder.

use crate::gate::{Builder, Netlist, WireId, WIRE_FALSE, WIRE_TRUE};

/// A little-endian bundle of wires.
#[derive(Debug, Clone)]
pub struct BitWord {
    bits: Vec<WireId>,
}

impl BitWord {
    pub fn new(bits: Vec<WireId>) -> Self {
        BitWord { bits }
    }

    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn bit(&self, i: usize) -> WireId {
        self.bits[i]
    }

    pub fn bits(&self) -> &[WireId] {
        &self.bits
    }

    pub fn slice(&self, lo: usize, hi: usize) -> BitWord {
        BitWord::new(self.bits[lo..hi].to_vec())
    }

    /// Zero-extend to `width` with constant-false wires.
    pub fn zext(&self, width: usize) -> BitWord {
        assert!(width >= self.width());
        let mut bits = self.bits.clone();
        bits.resize(width, WIRE_FALSE);
        BitWord::new(bits)
    }
}

impl std::ops::Index<usize> for BitWord {
    type Output = WireId;
    fn index(&self, i: usize) -> &WireId {
        &self.bits[i]
    }
}

/// A constant word wired from the two constant rails.
pub fn const_word(value: u64, width: usize) -> BitWord {
    BitWord::new(
        (0..width)
            .map(|i| {
                if (value >> i) & 1 == 1 {
                    WIRE_TRUE
                } else {
                    WIRE_FALSE
                }
            })
            .collect(),
    )
}

/// One-bit full adder: 13 neurons (two XORs sharing `a XOR b`, two ANDs and
/// an OR for the carry).
pub fn full_adder(b: &mut Builder, x: WireId, y: WireId, cin: WireId) -> (WireId, WireId) {
    let x1 = b.xor(x, y);
    let s = b.xor(x1, cin);
    let c1 = b.and(x, y);
    let c2 = b.and(x1, cin);
    let cout = b.or(c1, c2);
    (s, cout)
}

/// Ripple-carry adder: 13 neurons per bit, carry chained through every
/// stage.
pub fn ripple_add(b: &mut Builder, x: &BitWord, y: &BitWord, cin: WireId) -> (BitWord, WireId) {
    assert_eq!(x.width(), y.width(), "adder operand widths");
    let mut carry = cin;
    let mut sum = Vec::with_capacity(x.width());
    for i in 0..x.width() {
        let (s, c) = full_adder(b, x.bit(i), y.bit(i), carry);
        sum.push(s);
        carry = c;
    }
    (BitWord::new(sum), carry)
}

/// Propagate/generate adder: `P` and `G` for every bit in parallel, then a
/// carry chain of single fused neurons computing `G OR (P AND C)` each.
/// Shallower than ripple for every width >= 2 because each carry stage is
/// one layer instead of a two-XOR round trip.
pub fn pg_carry_chain(b: &mut Builder, x: &BitWord, y: &BitWord, cin: WireId) -> (BitWord, WireId) {
    assert_eq!(x.width(), y.width(), "adder operand widths");
    let w = x.width();
    let p: Vec<WireId> = (0..w).map(|i| b.xor(x.bit(i), y.bit(i))).collect();
    let g: Vec<WireId> = (0..w).map(|i| b.and(x.bit(i), y.bit(i))).collect();
    let mut carry = cin;
    let mut sum = Vec::with_capacity(w);
    for i in 0..w {
        sum.push(b.xor(p[i], carry));
        carry = b.threshold_neuron(&[(g[i], 2.0), (p[i], 1.0), (carry, 1.0)], 0.0, 1.5);
    }
    (BitWord::new(sum), carry)
}

/// `x - y` as invert-and-carry-in addition.  The flag is the carry out,
/// true exactly when `x >= y` (no borrow); the difference is modulo `2^w`.
pub fn sub(b: &mut Builder, x: &BitWord, y: &BitWord) -> (BitWord, WireId) {
    let ny = not_word(b, y);
    pg_carry_chain(b, x, &ny, WIRE_TRUE)
}

/// `x - y`, clamped to zero when `y > x`.
pub fn sub_saturate(b: &mut Builder, x: &BitWord, y: &BitWord) -> BitWord {
    let (diff, no_borrow) = sub(b, x, y);
    mask(b, no_borrow, &diff)
}

/// Increment-by-carry chain (half adders).
pub fn inc(b: &mut Builder, x: &BitWord, cin: WireId) -> (BitWord, WireId) {
    let mut carry = cin;
    let mut out = Vec::with_capacity(x.width());
    for i in 0..x.width() {
        out.push(b.xor(x.bit(i), carry));
        carry = b.and(x.bit(i), carry);
    }
    (BitWord::new(out), carry)
}

/// Wrapping decrement (adds all-ones).
pub fn dec(b: &mut Builder, x: &BitWord) -> BitWord {
    let ones = const_word(u64::MAX >> (64 - x.width()), x.width());
    ripple_add(b, x, &ones, WIRE_FALSE).0
}

pub fn not_word(b: &mut Builder, x: &BitWord) -> BitWord {
    BitWord::new(x.bits().iter().map(|&w| b.not(w)).collect())
}

/// AND every bit with `enable`.
pub fn mask(b: &mut Builder, enable: WireId, x: &BitWord) -> BitWord {
    BitWord::new(x.bits().iter().map(|&w| b.and(enable, w)).collect())
}

/// Bitwise select: `s ? x : y`.
pub fn mux_word(b: &mut Builder, s: WireId, x: &BitWord, y: &BitWord) -> BitWord {
    assert_eq!(x.width(), y.width(), "mux operand widths");
    BitWord::new(
        (0..x.width())
            .map(|i| b.mux(s, x.bit(i), y.bit(i)))
            .collect(),
    )
}

pub fn or_all(b: &mut Builder, x: &BitWord) -> WireId {
    b.or_tree(x.bits())
}

/// Shift direction for [`barrel_shift`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftDirection {
    Left,
    Right,
}

/// Logarithmic shifter: logical shift of `x` by `value(amount)`, built from
/// MUX stages, one per amount bit.
///
/// Right shifts OR every shifted-out bit into the sticky output; left
/// shifts do the same for bits dropped past the top.  Amounts at or beyond
/// the word width produce a zero word with sticky = OR of all input bits.
/// The conventional amount width is `ceil(log2(width)) + 1` (one headroom
/// bit to express saturation), but any width is accepted; extra high bits
/// simply force saturation.
pub fn barrel_shift(
    b: &mut Builder,
    x: &BitWord,
    amount: &BitWord,
    direction: ShiftDirection,
) -> (BitWord, WireId) {
    match direction {
        ShiftDirection::Right => shift_right_sticky(b, x, amount),
        ShiftDirection::Left => shift_left_sticky(b, x, amount),
    }
}

/// Logical right shift by a variable amount, capturing every bit shifted
/// out (or squashed by saturation) in a sticky OR.
///
/// The shift amount may be any width: stage `j` shifts by `2^j`, and any
/// amount bit with `2^j >= width` forces the saturated result (all zeros,
/// sticky = OR of the whole input).
pub fn shift_right_sticky(b: &mut Builder, x: &BitWord, amount: &BitWord) -> (BitWord, WireId) {
    let n = x.width();
    let mut cur: Vec<WireId> = x.bits().to_vec();
    let mut sticky_terms = Vec::new();
    let mut sat_bits = Vec::new();
    for j in 0..amount.width() {
        let a_j = amount.bit(j);
        let sh = 1usize << j.min(63);
        if sh >= n {
            sat_bits.push(a_j);
            continue;
        }
        let lost = b.or_tree(&cur[0..sh]);
        sticky_terms.push(b.and(a_j, lost));
        cur = (0..n)
            .map(|i| {
                let shifted = cur.get(i + sh).copied().unwrap_or(WIRE_FALSE);
                b.mux(a_j, shifted, cur[i])
            })
            .collect();
    }
    if !sat_bits.is_empty() {
        let sat = b.or_tree(&sat_bits);
        let any = b.or_tree(x.bits());
        sticky_terms.push(b.and(sat, any));
        let keep = b.not(sat);
        cur = cur.into_iter().map(|c| b.and(keep, c)).collect();
    }
    let sticky = b.or_tree(&sticky_terms);
    (BitWord::new(cur), sticky)
}

/// Logical left shift by a variable amount; bits shifted past the top are
/// dropped, and amounts at or beyond the width produce zero.
pub fn shift_left(b: &mut Builder, x: &BitWord, amount: &BitWord) -> BitWord {
    shift_left_sticky(b, x, amount).0
}

fn shift_left_sticky(b: &mut Builder, x: &BitWord, amount: &BitWord) -> (BitWord, WireId) {
    let n = x.width();
    let mut cur: Vec<WireId> = x.bits().to_vec();
    let mut sticky_terms = Vec::new();
    let mut sat_bits = Vec::new();
    for j in 0..amount.width() {
        let a_j = amount.bit(j);
        let sh = 1usize << j.min(63);
        if sh >= n {
            sat_bits.push(a_j);
            continue;
        }
        let lost = b.or_tree(&cur[n - sh..n]);
        sticky_terms.push(b.and(a_j, lost));
        cur = (0..n)
            .map(|i| {
                let shifted = if i >= sh { cur[i - sh] } else { WIRE_FALSE };
                b.mux(a_j, shifted, cur[i])
            })
            .collect();
    }
    if !sat_bits.is_empty() {
        let sat = b.or_tree(&sat_bits);
        let any = b.or_tree(x.bits());
        sticky_terms.push(b.and(sat, any));
        let keep = b.not(sat);
        cur = cur.into_iter().map(|c| b.and(keep, c)).collect();
    }
    let sticky = b.or_tree(&sticky_terms);
    (BitWord::new(cur), sticky)
}

/// Count of leading (most-significant) zero bits, by recursive halving.
///
/// The result width is `log2(next_pow2(n)) + 1`; an all-zero input counts
/// the full width `n`.  Internally the input is padded at the least
/// significant end with constant-true wires up to a power of two, which
/// makes the all-zero case fall out of the recursion instead of needing a
/// separate flag.
pub fn leading_zero_count(b: &mut Builder, x: &BitWord) -> BitWord {
    let n = x.width();
    assert!(n > 0);
    let padded = n.next_power_of_two();
    // MSB-first segment list; each entry is (all_zero, count bits).
    let mut segs: Vec<(WireId, Vec<WireId>)> = Vec::with_capacity(padded);
    for i in (0..n).rev() {
        segs.push((b.not(x.bit(i)), Vec::new()));
    }
    for _ in n..padded {
        segs.push((WIRE_FALSE, Vec::new()));
    }
    while segs.len() > 1 {
        let mut next = Vec::with_capacity(segs.len() / 2);
        for pair in segs.chunks(2) {
            let (az_hi, cnt_hi) = &pair[0];
            let (az_lo, cnt_lo) = &pair[1];
            let az = b.and(*az_hi, *az_lo);
            let mut cnt: Vec<WireId> = (0..cnt_hi.len())
                .map(|i| b.mux(*az_hi, cnt_lo[i], cnt_hi[i]))
                .collect();
            cnt.push(*az_hi);
            next.push((az, cnt));
        }
        segs = next;
    }
    // Sub-counts are only valid where the subtree is not all-zero; at the
    // root that means masking them with the flag before it becomes the top
    // count bit (count = width for an all-zero input).
    let (az, cnt) = segs.pop().unwrap();
    let keep = b.not(az);
    let mut bits: Vec<WireId> = cnt.iter().map(|&c| b.and(keep, c)).collect();
    bits.push(az);
    BitWord::new(bits)
}

/// Array multiplier: AND partial products, columns reduced 3:2 with full
/// adders, final two rows through the propagate/generate adder.
pub fn array_multiply(b: &mut Builder, x: &BitWord, y: &BitWord) -> BitWord {
    use std::collections::VecDeque;
    let (wx, wy) = (x.width(), y.width());
    assert!(wx > 0 && wy > 0);
    let wp = wx + wy;
    let mut cols: Vec<VecDeque<WireId>> = vec![VecDeque::new(); wp + 1];
    for i in 0..wx {
        for j in 0..wy {
            let pp = b.and(x.bit(i), y.bit(j));
            cols[i + j].push_back(pp);
        }
    }
    for k in 0..wp {
        while cols[k].len() >= 3 {
            let a0 = cols[k].pop_front().unwrap();
            let a1 = cols[k].pop_front().unwrap();
            let a2 = cols[k].pop_front().unwrap();
            let (s, c) = full_adder(b, a0, a1, a2);
            cols[k].push_back(s);
            cols[k + 1].push_back(c);
        }
    }
    let row0 = BitWord::new(
        (0..wp)
            .map(|k| cols[k].pop_front().unwrap_or(WIRE_FALSE))
            .collect(),
    );
    let row1 = BitWord::new(
        (0..wp)
            .map(|k| cols[k].pop_front().unwrap_or(WIRE_FALSE))
            .collect(),
    );
    pg_carry_chain(b, &row0, &row1, WIRE_FALSE).0
}

/// Unsigned comparison flags.
#[derive(Debug, Clone, Copy)]
pub struct Compare {
    pub lt: WireId,
    pub eq: WireId,
    pub gt: WireId,
}

/// Unsigned compare: per-bit equality, an MSB-down equality prefix chain,
/// and `gt` terms `a_i AND NOT b_i` gated by "all higher bits equal".
pub fn compare(b: &mut Builder, x: &BitWord, y: &BitWord) -> Compare {
    assert_eq!(x.width(), y.width(), "compare operand widths");
    let w = x.width();
    let e: Vec<WireId> = (0..w)
        .map(|i| {
            let d = b.xor(x.bit(i), y.bit(i));
            b.not(d)
        })
        .collect();
    let eq = b.and_tree(&e);
    let mut higher_eq = WIRE_TRUE;
    let mut gt_terms = Vec::with_capacity(w);
    for i in (0..w).rev() {
        let nb = b.not(y.bit(i));
        let t = b.and(higher_eq, x.bit(i));
        gt_terms.push(b.and(t, nb));
        higher_eq = b.and(higher_eq, e[i]);
    }
    let gt = b.or_tree(&gt_terms);
    let neq = b.not(eq);
    let ngt = b.not(gt);
    let lt = b.and(neq, ngt);
    Compare { lt, eq, gt }
}

fn stack_words(words: &[&[u64]], widths: &[usize]) -> crate::gate::BitMatrix {
    use crate::gate::BitMatrix;
    let mut m = BitMatrix::from_words(widths[0], words[0]);
    for (vals, &w) in words.iter().zip(widths).skip(1) {
        m = m.vstack(&BitMatrix::from_words(w, vals)).unwrap();
    }
    m
}

/// Drive a two-operand-plus-carry netlist with host word lanes (testing and
/// scan harness convenience).
pub fn drive3(
    net: &Netlist,
    wx: usize,
    xs: &[u64],
    wy: usize,
    ys: &[u64],
    cin: &[u64],
) -> Vec<u64> {
    let m = stack_words(&[xs, ys, cin], &[wx, wy, 1]);
    net.eval(&m).unwrap().to_words()
}

/// Drive a two-operand netlist with host word lanes.
pub fn drive2(net: &Netlist, wx: usize, xs: &[u64], wy: usize, ys: &[u64]) -> Vec<u64> {
    let m = stack_words(&[xs, ys], &[wx, wy]);
    net.eval(&m).unwrap().to_words()
}

/// Standalone 1-bit full adder netlist (inputs `a, b, cin`; outputs
/// `sum, cout`).
pub fn full_adder_netlist() -> Netlist {
    let mut b = Builder::new();
    let x = b.input();
    let y = b.input();
    let cin = b.input();
    let (s, c) = full_adder(&mut b, x, y, cin);
    b.finish(&[s, c])
}

/// Ripple-carry adder netlist (inputs `a[w], b[w], cin`; outputs
/// `sum[w], cout`).
pub fn ripple_adder_netlist(width: usize) -> Netlist {
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(width));
    let y = BitWord::new(b.inputs(width));
    let cin = b.input();
    let (s, c) = ripple_add(&mut b, &x, &y, cin);
    let mut outs = s.bits().to_vec();
    outs.push(c);
    b.finish(&outs)
}

/// Propagate/generate adder netlist, same interface as the ripple version.
pub fn pg_adder_netlist(width: usize) -> Netlist {
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(width));
    let y = BitWord::new(b.inputs(width));
    let cin = b.input();
    let (s, c) = pg_carry_chain(&mut b, &x, &y, cin);
    let mut outs = s.bits().to_vec();
    outs.push(c);
    b.finish(&outs)
}

/// Array multiplier netlist (inputs `a[wx], b[wy]`; output `p[wx+wy]`).
pub fn multiplier_netlist(wx: usize, wy: usize) -> Netlist {
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(wx));
    let y = BitWord::new(b.inputs(wy));
    let p = array_multiply(&mut b, &x, &y);
    b.finish(p.bits())
}

/// Logarithmic right-shifter netlist with sticky output (inputs `x[w],
/// amount[clog2(w)+1]`; outputs `y[w], sticky`).  The amount word has
/// exactly one bit more than needed to index the word, so saturating
/// amounts are expressible.
pub fn shifter_netlist(width: usize) -> Netlist {
    let amt_width = (usize::BITS - (width - 1).leading_zeros()) as usize + 1;
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(width));
    let amount = BitWord::new(b.inputs(amt_width));
    let (y, sticky) = shift_right_sticky(&mut b, &x, &amount);
    let mut outs = y.bits().to_vec();
    outs.push(sticky);
    b.finish(&outs)
}

/// Leading-zero counter netlist.
pub fn lzc_netlist(width: usize) -> Netlist {
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(width));
    let cnt = leading_zero_count(&mut b, &x);
    b.finish(cnt.bits())
}

/// Unsigned comparator netlist (outputs `lt, eq, gt`).
pub fn comparator_netlist(width: usize) -> Netlist {
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(width));
    let y = BitWord::new(b.inputs(width));
    let c = compare(&mut b, &x, &y);
    b.finish(&[c.lt, c.eq, c.gt])
}
