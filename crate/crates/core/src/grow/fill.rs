use std::collections::VecDeque;

use crate::grid::Bitmap3D;

/// Adds every voxel that cannot reach the grid border through unselected
/// voxels (6-connectivity), closing interior holes left by thresholding.
pub fn fill_cavities(mask: &Bitmap3D) -> Bitmap3D {
    let geo = mask.geometry().clone();
    let [nx, ny, nz] = geo.resolution();
    let mut outside = Bitmap3D::empty(geo.clone());
    let mut queue = VecDeque::new();
    for i in 0..geo.node_count() {
        let [x, y, z] = geo.coords(i);
        let border = x == 0 || y == 0 || z == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz;
        if border && !mask.get(i) {
            outside.set(i, true);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let [x, y, z] = geo.coords(i);
        let steps = [[-1i64, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
        for [dx, dy, dz] in steps {
            let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
            if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                continue;
            }
            let j = geo.index(a as usize, b as usize, c as usize);
            if !mask.get(j) && !outside.get(j) {
                outside.set(j, true);
                queue.push_back(j);
            }
        }
    }
    outside.complement()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridGeometry;

    fn shell(g: &GridGeometry, lo: usize, hi: usize) -> Bitmap3D {
        Bitmap3D::from_fn(g.clone(), |i| {
            let c = g.coords(i);
            let inside = c.iter().all(|&v| (lo..=hi).contains(&v));
            let wall = c.iter().any(|&v| v == lo || v == hi);
            inside && wall
        })
    }

    #[test]
    fn closed_shell_is_filled_solid() {
        let g = GridGeometry::cube(8, 1.0).unwrap();
        let filled = fill_cavities(&shell(&g, 2, 6));
        let solid = Bitmap3D::from_fn(g.clone(), |i| g.coords(i).iter().all(|&v| (2..=6).contains(&v)));
        assert_eq!(filled, solid);
    }

    #[test]
    fn open_shell_and_border_pockets_stay_open() {
        let g = GridGeometry::cube(8, 1.0).unwrap();
        let mut open = shell(&g, 2, 6);
        open.set(g.index(4, 4, 2), false);
        assert_eq!(fill_cavities(&open), open);
        // a pocket touching the border is reachable from outside
        let cup = Bitmap3D::from_fn(g.clone(), |i| {
            let [x, y, z] = g.coords(i);
            x <= 2 && (y == 0 || y == 7 || z == 0 || z == 7 || x == 2)
        });
        assert_eq!(fill_cavities(&cup), cup);
    }

    #[test]
    fn fill_is_idempotent_superset() {
        let g = GridGeometry::cube(6, 1.0).unwrap();
        let m = Bitmap3D::from_fn(g.clone(), |i| (i * 7919) % 5 < 2);
        let f = fill_cavities(&m);
        assert!(m.is_subset_of(&f));
        assert_eq!(fill_cavities(&f), f);
        assert_eq!(fill_cavities(&Bitmap3D::empty(g.clone())).count_ones(), 0);
    }
}
