//! Reference launch simulator and partition enumerator for tests. Written
//! against the scheduling rules directly, sharing no code with the library:
//! time advances event by event and every decision rescans all nodes.

#![allow(dead_code)]

#[derive(Clone, Debug)]
pub struct OracleNode {
    pub id: String,
    pub module: String,
    pub dependent: bool,
    pub duration: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct OracleModel {
    pub a: f64,
    pub b: f64,
    pub init: f64,
    pub cores: Option<usize>,
}

/// Start times keyed by node index, plus the total.
pub fn oracle_simulate(nodes: &[OracleNode], blocks: &[Vec<String>], m: OracleModel) -> (Vec<f64>, f64) {
    // unit index = rank of the block in sorted order of sorted blocks
    let mut sorted: Vec<Vec<String>> = blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.sort();
            b
        })
        .collect();
    sorted.sort();
    let unit = |module: &str| sorted.iter().position(|b| b.iter().any(|x| x == module)).unwrap();
    let ready = m.a + m.b * sorted.len() as f64;
    let go = ready + m.init;

    let n = nodes.len();
    let mut start: Vec<Option<f64>> = vec![None; n];
    let end = |i: usize, s: &Vec<Option<f64>>| s[i].map(|x| x + nodes[i].duration);
    let mut t = go;
    loop {
        if start.iter().all(Option::is_some) {
            break;
        }
        loop {
            let busy = (0..n).filter(|&i| start[i].is_some() && end(i, &start).unwrap() > t).count();
            if m.cores.is_some_and(|c| busy >= c) {
                break;
            }
            let mut candidates: Vec<usize> = (0..n)
                .filter(|&i| start[i].is_none())
                .filter(|&i| {
                    if nodes[i].dependent {
                        return true;
                    }
                    let u = unit(&nodes[i].module);
                    (0..n)
                        .filter(|&j| nodes[j].dependent && unit(&nodes[j].module) == u)
                        .all(|j| end(j, &start).is_some_and(|e| e <= t))
                })
                .collect();
            if candidates.is_empty() {
                break;
            }
            candidates.sort_by(|&x, &y| {
                let kx = (unit(&nodes[x].module), !nodes[x].dependent, nodes[x].id.clone());
                let ky = (unit(&nodes[y].module), !nodes[y].dependent, nodes[y].id.clone());
                kx.cmp(&ky)
            });
            start[candidates[0]] = Some(t);
        }
        let next = (0..n)
            .filter_map(|i| end(i, &start))
            .filter(|&e| e > t)
            .fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            break;
        }
        t = next;
    }
    let starts: Vec<f64> = start.into_iter().map(Option::unwrap).collect();
    let total = (0..n).map(|i| starts[i] + nodes[i].duration).fold(ready, f64::max);
    (starts, total)
}

/// All set partitions by recursive placement of each module.
pub fn oracle_partitions(modules: &[String]) -> Vec<Vec<Vec<String>>> {
    fn place(i: usize, modules: &[String], cur: &mut Vec<Vec<String>>, out: &mut Vec<Vec<Vec<String>>>) {
        if i == modules.len() {
            out.push(cur.clone());
            return;
        }
        for b in 0..cur.len() {
            cur[b].push(modules[i].clone());
            place(i + 1, modules, cur, out);
            cur[b].pop();
        }
        cur.push(vec![modules[i].clone()]);
        place(i + 1, modules, cur, out);
        cur.pop();
    }
    let mut out = Vec::new();
    place(0, modules, &mut Vec::new(), &mut out);
    out
}

/// Best (total, block count, canonical blocks) by brute force with the same
/// preference order the optimizer documents: lowest total, then more blocks,
/// then the lexicographically smallest canonical plan.
pub fn oracle_best(nodes: &[OracleNode], modules: &[String], m: OracleModel) -> (f64, Vec<Vec<String>>) {
    let mut best: Option<(f64, Vec<Vec<String>>)> = None;
    for p in oracle_partitions(modules) {
        let mut canon: Vec<Vec<String>> = p
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.sort();
                b
            })
            .collect();
        canon.sort();
        let (_, total) = oracle_simulate(nodes, &canon, m);
        let replace = match &best {
            None => true,
            Some((bt, bp)) => {
                total < *bt || (total == *bt && (canon.len() > bp.len() || (canon.len() == bp.len() && canon < *bp)))
            }
        };
        if replace {
            best = Some((total, canon));
        }
    }
    best.unwrap()
}
