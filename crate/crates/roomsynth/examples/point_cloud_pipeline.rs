//! Point-cloud processing behind the codec: surface sampling, farthest
//! point sampling, kNN patches, Chamfer distances between styles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomsynth::geometry::{chamfer, fps, knn_patches, make_furniture, sample_surface};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let chair_a = make_furniture("chair", 0).unwrap();
    let chair_b = make_furniture("chair", 1).unwrap();
    let table = make_furniture("table", 0).unwrap();

    let cloud_a = sample_surface(&chair_a, 1024, &mut rng).unwrap();
    let cloud_a2 = sample_surface(&chair_a, 1024, &mut rng).unwrap();
    let cloud_b = sample_surface(&chair_b, 1024, &mut rng).unwrap();
    let cloud_t = sample_surface(&table, 1024, &mut rng).unwrap();

    let anchors_idx = fps(&cloud_a, 64).unwrap();
    let anchors: Vec<[f64; 3]> = anchors_idx.iter().map(|&i| cloud_a.points[i]).collect();
    let patches = knn_patches(&cloud_a, &anchors, 16).unwrap();
    let mean_radius = patches
        .patches
        .iter()
        .map(|p| p.iter().map(|q| q.iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max))
        .sum::<f64>()
        / patches.patches.len() as f64;

    println!("chair A: {} surface points, 64 FPS anchors, mean patch radius {mean_radius:.3}", cloud_a.len());
    println!("chamfer(chair A, chair A resampled) = {:.5}", chamfer(&cloud_a, &cloud_a2));
    println!("chamfer(chair A, chair B)           = {:.5}", chamfer(&cloud_a, &cloud_b));
    println!("chamfer(chair A, table)             = {:.5}", chamfer(&cloud_a, &cloud_t));
}
