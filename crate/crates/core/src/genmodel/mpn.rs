use super::{GenModel, MpnIds};
use crate::chemgraph::MolGraph;
use crate::error::Result;
use crate::numsub::{Tape, Var};

/// Per-atom vectors (`n × hidden`) from directed-edge message passing.
///
/// Edge `2k` runs `a → b` along bond `k`, edge `2k + 1` the reverse.
pub(crate) fn mpn_embed(
    tape: &mut Tape,
    model: &GenModel,
    ids: &MpnIds,
    g: &MolGraph,
) -> Result<Var> {
    let n = g.atom_count();
    let emb = tape.param(model.ids.atom_emb);
    let a = tape.gather_rows(emb, &model.atom_rows(g))?;
    let u_atom = tape.param(ids.u_atom);
    let b_out = tape.param(ids.b_out);
    let self_term = tape.matmul(a, u_atom)?;
    let self_term = tape.add_row(self_term, b_out)?;
    if g.bond_count() == 0 {
        return Ok(tape.relu(self_term));
    }

    let mut src = Vec::with_capacity(2 * g.bond_count());
    let mut dst = Vec::with_capacity(2 * g.bond_count());
    let mut kinds = Vec::with_capacity(2 * g.bond_count());
    for b in g.bonds() {
        src.extend([b.a, b.b]);
        dst.extend([b.b, b.a]);
        kinds.extend([b.order.index(); 2]);
    }
    let rev: Vec<usize> = (0..src.len()).map(|e| e ^ 1).collect();

    let w_atom = tape.param(ids.w_atom);
    let w_bond = tape.param(ids.w_bond);
    let w_msg = tape.param(ids.w_msg);
    let b_msg = tape.param(ids.b_msg);
    let bond_emb = tape.param(model.ids.bond_emb);

    let aw = tape.matmul(a, w_atom)?;
    let from_atom = tape.gather_rows(aw, &src)?;
    let be = tape.gather_rows(bond_emb, &kinds)?;
    let from_bond = tape.matmul(be, w_bond)?;
    let base = tape.add(from_atom, from_bond)?;
    let base = tape.add_row(base, b_msg)?;

    let mut m = tape.relu(base);
    for _ in 1..model.config.depth {
        let incoming = tape.scatter_add_rows(m, &dst, n)?;
        let at_src = tape.gather_rows(incoming, &src)?;
        let back = tape.gather_rows(m, &rev)?;
        let s = tape.sub(at_src, back)?;
        let s = tape.matmul(s, w_msg)?;
        let pre = tape.add(base, s)?;
        m = tape.relu(pre);
    }

    let incoming = tape.scatter_add_rows(m, &dst, n)?;
    let u_msg = tape.param(ids.u_msg);
    let msg_term = tape.matmul(incoming, u_msg)?;
    let h = tape.add(self_term, msg_term)?;
    Ok(tape.relu(h))
}
