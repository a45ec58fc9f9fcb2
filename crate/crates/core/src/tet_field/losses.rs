//! Mesh regularizers with vertex gradients.

use crate::math::Vec3;
use crate::mesh::TriMesh;

/// A scalar loss and its gradient with respect to every vertex.
#[derive(Clone, Debug, Default)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

fn boundary_vertices(mesh: &TriMesh) -> Vec<bool> {
    let mut on = vec![false; mesh.vertices.len()];
    for ((a, b), count) in mesh.edge_face_counts() {
        if count == 1 {
            on[a as usize] = true;
            on[b as usize] = true;
        }
    }
    on
}

/// `‖v_i − mean(neighbours)‖²` per vertex; `None` for boundary or isolated vertices.
pub fn laplacian_terms(mesh: &TriMesh) -> Vec<Option<f64>> {
    let nbr = mesh.vertex_neighbors();
    let boundary = boundary_vertices(mesh);
    (0..mesh.vertices.len())
        .map(|i| {
            if boundary[i] || nbr[i].is_empty() {
                return None;
            }
            Some(uniform_laplacian(mesh, &nbr[i], i).norm_squared())
        })
        .collect()
}

fn uniform_laplacian(mesh: &TriMesh, nbr: &[u32], i: usize) -> Vec3 {
    let mean = nbr.iter().map(|&j| mesh.vertices[j as usize]).sum::<Vec3>() / nbr.len() as f64;
    mesh.vertices[i] - mean
}

/// Mean squared uniform Laplacian over interior vertices.
pub fn laplacian_loss(mesh: &TriMesh) -> LossGrad {
    let n = mesh.vertices.len();
    let nbr = mesh.vertex_neighbors();
    let boundary = boundary_vertices(mesh);
    let interior: Vec<usize> = (0..n).filter(|&i| !boundary[i] && !nbr[i].is_empty()).collect();
    let mut out = LossGrad {
        value: 0.0,
        grad: vec![Vec3::zeros(); n],
    };
    if interior.is_empty() {
        return out;
    }
    let scale = 1.0 / interior.len() as f64;
    for &i in &interior {
        let delta = uniform_laplacian(mesh, &nbr[i], i);
        out.value += delta.norm_squared();
        let g = delta * (2.0 * scale);
        out.grad[i] += g;
        let share = g / nbr[i].len() as f64;
        for &j in &nbr[i] {
            out.grad[j as usize] -= share;
        }
    }
    out.value *= scale;
    out
}

/// Mean of `1 − cos θ` between the normals of edge-adjacent faces.
/// Pairs involving a zero-area face are skipped.
pub fn normal_consistency_loss(mesh: &TriMesh) -> LossGrad {
    let n = mesh.vertices.len();
    let mut out = LossGrad {
        value: 0.0,
        grad: vec![Vec3::zeros(); n],
    };
    let crosses: Vec<Vec3> = (0..mesh.faces.len()).map(|f| mesh.face_cross(f)).collect();
    let pairs: Vec<(u32, u32)> = mesh
        .adjacent_face_pairs()
        .into_iter()
        .filter(|&(a, b)| crosses[a as usize].norm() > 1e-20 && crosses[b as usize].norm() > 1e-20)
        .collect();
    if pairs.is_empty() {
        return out;
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut dcross = vec![Vec3::zeros(); mesh.faces.len()];
    for &(a, b) in &pairs {
        let (ca, cb) = (crosses[a as usize], crosses[b as usize]);
        let (la, lb) = (ca.norm(), cb.norm());
        let (na, nb) = (ca / la, cb / lb);
        out.value += 1.0 - na.dot(&nb);
        // ∂(−na·nb)/∂ca = −(I − na naᵀ) nb / |ca|
        dcross[a as usize] -= (nb - na * na.dot(&nb)) * (scale / la);
        dcross[b as usize] -= (na - nb * nb.dot(&na)) * (scale / lb);
    }
    out.value *= scale;
    for (f, g) in dcross.iter().enumerate() {
        if *g == Vec3::zeros() {
            continue;
        }
        let [v0, v1, v2] = mesh.faces[f].map(|i| i as usize);
        let (e1, e2) = (mesh.vertices[v1] - mesh.vertices[v0], mesh.vertices[v2] - mesh.vertices[v0]);
        let g1 = e2.cross(g);
        let g2 = g.cross(&e1);
        out.grad[v1] += g1;
        out.grad[v2] += g2;
        out.grad[v0] -= g1 + g2;
    }
    out
}
