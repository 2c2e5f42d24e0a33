//! Non-canonical SMILES output. With a random number generator the
//! traversal start and neighbour order are shuffled, which yields alternate
//! spellings of the same molecule.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{organic_implicit_h, Atom, BondOrder, MolecularGraph};

/// Writes `graph` in atom-index order.
pub fn write_smiles(graph: &MolecularGraph) -> String {
    write_impl(graph, None::<&mut rand::rngs::mock::StepRng>)
}

/// Writes `graph` from a random root with random branch order.
pub fn write_smiles_randomized<R: Rng + ?Sized>(graph: &MolecularGraph, rng: &mut R) -> String {
    write_impl(graph, Some(rng))
}

struct Traversal {
    /// Preorder of atoms with, per atom, the child list in visit order.
    children: Vec<Vec<usize>>,
    /// Ring-closure bonds as `(opened_at, closed_at)`.
    closures: Vec<(usize, usize)>,
    roots: Vec<usize>,
}

fn traverse<R: Rng + ?Sized>(graph: &MolecularGraph, mut rng: Option<&mut R>) -> Traversal {
    let n = graph.atom_count();
    let mut visited = vec![false; n];
    let mut children = vec![Vec::new(); n];
    let mut closures = Vec::new();
    let mut bond_used = vec![false; graph.bonds().len()];

    let mut starts: Vec<usize> = (0..n).collect();
    if let Some(r) = rng.as_deref_mut() {
        starts.shuffle(r);
    }
    let mut roots = Vec::new();
    for &start in &starts {
        if visited[start] {
            continue;
        }
        roots.push(start);
        // iterative DFS keeping explicit neighbour cursors
        visited[start] = true;
        let mut stack: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        let mut nbrs = graph.incident(start).to_vec();
        if let Some(r) = rng.as_deref_mut() {
            nbrs.shuffle(r);
        }
        stack.push((start, nbrs));
        while let Some((atom, pending)) = stack.last_mut() {
            let atom = *atom;
            let Some((next, bond)) = pending.pop() else {
                stack.pop();
                continue;
            };
            if bond_used[bond] {
                continue;
            }
            bond_used[bond] = true;
            if visited[next] {
                closures.push((next, atom));
                continue;
            }
            visited[next] = true;
            children[atom].push(next);
            let mut nbrs = graph.incident(next).to_vec();
            if let Some(r) = rng.as_deref_mut() {
                nbrs.shuffle(r);
            }
            stack.push((next, nbrs));
        }
    }
    Traversal {
        children,
        closures,
        roots,
    }
}

fn write_impl<R: Rng + ?Sized>(graph: &MolecularGraph, rng: Option<&mut R>) -> String {
    let traversal = traverse(graph, rng);
    let mut emitter = Emitter {
        graph,
        traversal: &traversal,
        out: String::new(),
        free_digits: Vec::new(),
        next_digit: 1,
        open: Vec::new(),
    };
    for (i, &root) in traversal.roots.iter().enumerate() {
        if i > 0 {
            emitter.out.push('.');
        }
        emitter.emit(root, None);
    }
    emitter.out
}

struct Emitter<'a> {
    graph: &'a MolecularGraph,
    traversal: &'a Traversal,
    out: String,
    /// Released ring digits, largest first so `pop` reuses the smallest.
    free_digits: Vec<u16>,
    next_digit: u16,
    open: Vec<(usize, usize, u16)>,
}

impl Emitter<'_> {
    fn emit(&mut self, atom: usize, parent: Option<usize>) {
        if let Some(p) = parent {
            self.out.push_str(bond_symbol(self.graph, p, atom));
        }
        self.out.push_str(&atom_token(self.graph, atom));

        for &(opened, closed) in &self.traversal.closures {
            if closed == atom {
                let slot = self
                    .open
                    .iter()
                    .position(|&(a, b, _)| a == opened && b == closed)
                    .expect("ring closure opened before it is closed");
                let (_, _, digit) = self.open.remove(slot);
                self.out.push_str(bond_symbol(self.graph, opened, closed));
                push_digit(&mut self.out, digit);
                self.free_digits.push(digit);
                self.free_digits.sort_unstable_by(|a, b| b.cmp(a));
            } else if opened == atom {
                let digit = match self.free_digits.pop() {
                    Some(d) => d,
                    None => {
                        self.next_digit += 1;
                        self.next_digit - 1
                    }
                };
                self.open.push((opened, closed, digit));
                push_digit(&mut self.out, digit);
            }
        }

        let kids = &self.traversal.children[atom];
        if let Some((&last, rest)) = kids.split_last() {
            for &kid in rest {
                self.out.push('(');
                self.emit(kid, Some(atom));
                self.out.push(')');
            }
            self.emit(last, Some(atom));
        }
    }
}

fn push_digit(out: &mut String, digit: u16) {
    if digit < 10 {
        out.push(char::from(b'0' + digit as u8));
    } else {
        out.push_str(&format!("%{digit:02}"));
    }
}

fn bond_symbol(graph: &MolecularGraph, a: usize, b: usize) -> &'static str {
    let bond = graph.bond_between(a, b).expect("bond exists");
    let both_aromatic = graph.atoms()[a].aromatic && graph.atoms()[b].aromatic;
    match bond.order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn atom_token(graph: &MolecularGraph, index: usize) -> String {
    let atom: &Atom = &graph.atoms()[index];
    let bond_sum: u32 = graph
        .incident(index)
        .iter()
        .map(|&(_, bi)| u32::from(graph.bonds()[bi].order.valence_contribution()))
        .sum();
    let symbol = if atom.aromatic {
        atom.element.symbol().to_ascii_lowercase()
    } else {
        atom.element.symbol().to_string()
    };
    let organic_ok = atom.formal_charge == 0
        && organic_implicit_h(atom.element, atom.aromatic, bond_sum) == Some(atom.implicit_h);
    if organic_ok {
        return symbol;
    }
    let mut token = format!("[{symbol}");
    match atom.implicit_h {
        0 => {}
        1 => token.push('H'),
        h => token.push_str(&format!("H{h}")),
    }
    match atom.formal_charge {
        0 => {}
        1 => token.push('+'),
        -1 => token.push('-'),
        c if c > 0 => token.push_str(&format!("+{c}")),
        c => token.push_str(&format!("-{}", -c)),
    }
    token.push(']');
    token
}
