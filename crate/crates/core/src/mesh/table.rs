//! Marching-cubes case table derived from face rules instead of a literal
//! 256-row table.
//!
//! On every cube face the sign-change edges are joined by segments; when all
//! four face edges cross, each segment cuts off one negative corner. Segments
//! are directed so the resulting polygons wind counter-clockwise seen from the
//! positive side, chained into loops and fanned into triangles. Because the
//! face rule only looks at the face's own corners, adjacent cells always agree
//! on their shared face and the surface is crack free.

use std::sync::OnceLock;

/// Corner `k` sits at offset `(k & 1, (k >> 1) & 1, (k >> 2) & 1)`.
pub const CORNERS: [[i32; 3]; 8] = {
    let mut c = [[0; 3]; 8];
    let mut k = 0;
    while k < 8 {
        c[k] = [(k & 1) as i32, ((k >> 1) & 1) as i32, ((k >> 2) & 1) as i32];
        k += 1;
    }
    c
};

/// Edges as (low corner, high corner); the corners differ along one axis.
pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as four corners in cyclic order plus the outward face normal.
const FACES: [([usize; 4], [i32; 3]); 6] = [
    ([0, 2, 6, 4], [-1, 0, 0]),
    ([1, 3, 7, 5], [1, 0, 0]),
    ([0, 1, 5, 4], [0, -1, 0]),
    ([2, 3, 7, 6], [0, 1, 0]),
    ([0, 1, 3, 2], [0, 0, -1]),
    ([4, 5, 7, 6], [0, 0, 1]),
];

fn edge_between(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corners share an edge")
}

fn midpoint(e: usize) -> [f64; 3] {
    let (a, b) = EDGES[e];
    [0, 1, 2].map(|k| (CORNERS[a][k] + CORNERS[b][k]) as f64 / 2.0)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Segment `a → b` directed so that, seen from outside the face, the
/// negative corner lies on the side that makes the polygon wind
/// counter-clockwise about the positive-side normal.
fn directed(e0: usize, e1: usize, neg_corner: usize, normal: [i32; 3]) -> (usize, usize) {
    let (a, b) = (midpoint(e0), midpoint(e1));
    let c = CORNERS[neg_corner].map(|x| x as f64);
    let n = cross(sub(b, a), sub(c, a));
    let s: f64 = (0..3).map(|k| n[k] * normal[k] as f64).sum();
    if s < 0.0 {
        (e0, e1)
    } else {
        (e1, e0)
    }
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let neg = |corner: usize| case >> corner & 1 == 1;
    // successor of each edge vertex in the directed loops
    let mut next = [usize::MAX; 12];
    for (corners, normal) in FACES {
        let crossing: Vec<usize> = (0..4)
            .filter(|&k| neg(corners[k]) != neg(corners[(k + 1) % 4]))
            .collect();
        match crossing.len() {
            0 => {}
            2 => {
                let e0 = edge_between(corners[crossing[0]], corners[(crossing[0] + 1) % 4]);
                let e1 = edge_between(corners[crossing[1]], corners[(crossing[1] + 1) % 4]);
                let c = *corners.iter().find(|&&c| neg(c)).expect("a crossing face has a negative corner");
                let (a, b) = directed(e0, e1, c, normal);
                next[a] = b;
            }
            4 => {
                for k in 0..4 {
                    if neg(corners[k]) {
                        let e0 = edge_between(corners[(k + 3) % 4], corners[k]);
                        let e1 = edge_between(corners[k], corners[(k + 1) % 4]);
                        let (a, b) = directed(e0, e1, corners[k], normal);
                        next[a] = b;
                    }
                }
            }
            _ => unreachable!("a square has an even number of sign changes"),
        }
    }
    let mut tris = Vec::new();
    let mut used = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut e = next[start];
        while e != start {
            used[e] = true;
            lp.push(e);
            e = next[e];
        }
        for k in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
        }
    }
    tris
}

/// Triangles (as edge indices) for each of the 256 corner-sign cases. Bit `k`
/// of the case is set when corner `k` is negative.
pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn trivial_cases_are_empty() {
        assert!(case_table()[0].is_empty());
        assert!(case_table()[255].is_empty());
    }

    #[test]
    fn single_corner_is_one_outward_triangle() {
        let t = &case_table()[1];
        assert_eq!(t.len(), 1);
        let [a, b, c] = t[0].map(|e| midpoint(e as usize));
        let n = cross(sub(b, a), sub(c, a));
        // corner 0 is inside, so the normal points toward +x+y+z
        assert!(n.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn complement_uses_the_same_crossing_edges() {
        let edges_used = |t: &[[u8; 3]]| {
            let mut s: Vec<u8> = t.iter().flatten().copied().collect();
            s.sort();
            s.dedup();
            s
        };
        for case in 1..255 {
            assert_eq!(edges_used(&case_table()[case]), edges_used(&case_table()[255 - case]), "case {case}");
        }
    }

    #[test]
    fn every_case_is_a_closed_surface_patch() {
        // every directed mesh edge between two cube faces must be matched by
        // its reverse, except the boundary edges lying in cube faces
        for (case, tris) in case_table().iter().enumerate() {
            let mut count: HashMap<(u8, u8), i32> = HashMap::new();
            for t in tris {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    *count.entry((a, b)).or_default() += 1;
                }
            }
            for (&(a, b), &n) in &count {
                let rev = count.get(&(b, a)).copied().unwrap_or(0);
                assert!(n == 1, "case {case}: edge repeated");
                if rev == 0 {
                    // boundary segment: both endpoints on a common face
                    let shares_face = FACES.iter().any(|(c, _)| {
                        let on = |e: u8| {
                            let (p, q) = EDGES[e as usize];
                            c.contains(&p) && c.contains(&q)
                        };
                        on(a) && on(b)
                    });
                    assert!(shares_face, "case {case}: open interior edge {a}-{b}");
                }
            }
        }
    }
}
