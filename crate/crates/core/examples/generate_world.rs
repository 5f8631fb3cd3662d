//! Generates one procedural house and prints its layout as ASCII.
//!
//! `cargo run --release --example generate_world -- 42`

use navformer::sim::{generate_house_with, object_class, WorldConfig};

fn main() -> navformer::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let house = generate_house_with(seed, &WorldConfig::default())?;
    println!("house {seed}: {:.1} x {:.1} m, {} rooms, {} objects", house.width, house.height, house.rooms.len(), house.objects.len());
    for room in &house.rooms {
        println!("  {:?} at ({:.1}, {:.1})..({:.1}, {:.1})", room.kind, room.rect.x0, room.rect.y0, room.rect.x1, room.rect.y1);
    }

    let grid = house.traversable();
    let mut canvas: Vec<Vec<char>> =
        (0..grid.rows).map(|i| (0..grid.cols).map(|j| if grid.get(i, j) { '.' } else { '#' }).collect()).collect();
    for o in &house.objects {
        if let Some((i, j)) = grid.cell_of(o.x, o.y) {
            canvas[i][j] = object_class(o.class_id).name.chars().next().unwrap_or('o');
        }
    }
    // Row 0 is y = 0; print top-down.
    for row in canvas.iter().rev() {
        println!("{}", row.iter().collect::<String>());
    }
    println!("free cells {}, connected components {}", grid.count(), grid.components());
    Ok(())
}
