//! Builds constraints in code and from a JSON spec, then evaluates violations
//! and gradients at a few points.

use constrained_flow::{builtin_case_study, parse_constraint, Constraint, ConstraintSpec};

fn main() -> anyhow::Result<()> {
    let ring = Constraint::annulus(vec![0.0, 0.0], 1.5, 2.8)?;
    let obstacles = builtin_case_study(3, None)?.constraint;

    let spec: ConstraintSpec = serde_json::from_str(
        r#"{"type": "all_of", "children": [
              {"type": "halfspace", "a": [1.0, 1.0], "b": 0.0},
              {"type": "inside_ball", "c": [0.0, 0.0], "r": 3.0}
           ]}"#,
    )?;
    let wedge = parse_constraint(&spec)?;

    for (name, c) in [("ring", &ring), ("obstacles", &obstacles), ("wedge", &wedge)] {
        println!("{name}");
        for x in [[0.0, 0.0], [2.0, 0.5], [3.0, 0.0], [-1.0, -2.5]] {
            let v = c.evaluate(&x)?.value();
            let g = c.gradient(&x)?;
            println!("  x = {x:?}  violation {v:.4}  gradient [{:.4}, {:.4}]", g[0], g[1]);
        }
    }
    // the spec round-trips
    println!("{}", serde_json::to_string(&wedge.to_spec())?);
    Ok(())
}
