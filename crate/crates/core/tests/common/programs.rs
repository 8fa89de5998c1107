//! Hand-counted executor fixtures and a typed program enumerator.

use semdec::clevr::{clevr_assets, execute, load_scene, parse_program, Answer, ExecError, OpKind, Scene, ValueType};

// Four objects, left to right by index; depth order 0, 2, 1, 3 from the back.
//   0 small red rubber cube
//   1 large blue metal sphere
//   2 large red rubber cylinder
//   3 small green metal cube
pub const SCENE: &str = r#"{
  "objects": [
    {"color": "red", "shape": "cube", "size": "small", "material": "rubber"},
    {"color": "blue", "shape": "sphere", "size": "large", "material": "metal"},
    {"color": "red", "shape": "cylinder", "size": "large", "material": "rubber"},
    {"color": "green", "shape": "cube", "size": "small", "material": "metal"}
  ],
  "relationships": {
    "left": [[], [0], [0, 1], [0, 1, 2]],
    "right": [[1, 2, 3], [2, 3], [3], []],
    "front": [[1, 2, 3], [3], [1, 3], []],
    "behind": [[], [0, 2], [0], [0, 1, 2]]
  }
}"#;

pub const CASES: &[(&str, &str)] = &[
    ("v0 = scene()\nv1 = count(v0)\n", "4"),
    ("v0 = scene()\nv1 = filter_color[red](v0)\nv2 = count(v1)\n", "2"),
    ("v0 = scene()\nv1 = filter_shape[cube](v0)\nv2 = count(v1)\n", "2"),
    ("v0 = scene()\nv1 = filter_color[yellow](v0)\nv2 = exist(v1)\n", "no"),
    ("v0 = scene()\nv1 = filter_material[metal](v0)\nv2 = filter_size[large](v1)\nv3 = exist(v2)\n", "yes"),
    ("v0 = scene()\nv1 = filter_color[blue](v0)\nv2 = unique(v1)\nv3 = query_shape(v2)\n", "sphere"),
    ("v0 = scene()\nv1 = filter_shape[cylinder](v0)\nv2 = unique(v1)\nv3 = query_color(v2)\n", "red"),
    ("v0 = scene()\nv1 = filter_color[green](v0)\nv2 = unique(v1)\nv3 = relate[left](v2)\nv4 = count(v3)\n", "3"),
    ("v0 = scene()\nv1 = filter_shape[sphere](v0)\nv2 = unique(v1)\nv3 = relate[right](v2)\nv4 = count(v3)\n", "2"),
    ("v0 = scene()\nv1 = filter_shape[cylinder](v0)\nv2 = unique(v1)\nv3 = relate[front](v2)\nv4 = count(v3)\n", "2"),
    ("v0 = scene()\nv1 = filter_color[blue](v0)\nv2 = unique(v1)\nv3 = relate[behind](v2)\nv4 = count(v3)\n", "2"),
    ("v0 = scene()\nv1 = filter_shape[cube](v0)\nv2 = filter_color[red](v1)\nv3 = unique(v2)\nv4 = same_color(v3)\nv5 = count(v4)\n", "1"),
    ("v0 = scene()\nv1 = filter_color[green](v0)\nv2 = unique(v1)\nv3 = same_shape(v2)\nv4 = count(v3)\n", "1"),
    ("v0 = scene()\nv1 = filter_color[blue](v0)\nv2 = unique(v1)\nv3 = same_size(v2)\nv4 = count(v3)\n", "1"),
    ("v0 = scene()\nv1 = filter_shape[cylinder](v0)\nv2 = unique(v1)\nv3 = same_material(v2)\nv4 = count(v3)\n", "1"),
    ("v0 = scene()\nv1 = filter_color[red](v0)\nv2 = filter_shape[cube](v0)\nv3 = union(v1, v2)\nv4 = count(v3)\n", "3"),
    ("v0 = scene()\nv1 = filter_color[red](v0)\nv2 = filter_size[small](v0)\nv3 = intersect(v1, v2)\nv4 = count(v3)\n", "1"),
    ("v0 = scene()\nv1 = filter_color[red](v0)\nv2 = count(v1)\nv3 = filter_shape[cube](v0)\nv4 = count(v3)\nv5 = equal_integer(v2, v4)\n", "yes"),
    ("v0 = scene()\nv1 = filter_material[rubber](v0)\nv2 = count(v1)\nv3 = filter_size[large](v0)\nv4 = count(v3)\nv5 = greater_than(v2, v4)\n", "no"),
    ("v0 = scene()\nv1 = filter_color[green](v0)\nv2 = count(v1)\nv3 = filter_material[metal](v0)\nv4 = count(v3)\nv5 = less_than(v2, v4)\n", "yes"),
    ("v0 = scene()\nv1 = filter_shape[sphere](v0)\nv2 = unique(v1)\nv3 = query_color(v2)\nv4 = filter_shape[cylinder](v0)\nv5 = unique(v4)\nv6 = query_color(v5)\nv7 = equal_color(v3, v6)\n", "no"),
    ("v0 = scene()\nv1 = filter_color[green](v0)\nv2 = unique(v1)\nv3 = query_material(v2)\nv4 = filter_color[blue](v0)\nv5 = unique(v4)\nv6 = query_material(v5)\nv7 = equal_material(v3, v6)\n", "yes"),
    ("v0 = scene()\nv1 = filter_shape[cylinder](v0)\nv2 = unique(v1)\nv3 = relate[right](v2)\nv4 = unique(v3)\nv5 = query_size(v4)\n", "small"),
    ("v0 = scene()\nv1 = filter_size[large](v0)\nv2 = filter_color[red](v1)\nv3 = unique(v2)\nv4 = query_material(v3)\n", "rubber"),
    ("v0 = scene()\nv1 = filter_color[green](v0)\nv2 = unique(v1)\nv3 = relate[front](v2)\nv4 = exist(v3)\n", "no"),
    ("v0 = scene()\nv1 = filter_size[small](v0)\nv2 = unique(v1)\nv3 = query_shape(v2)\n", "!non-unique"),
];

// three objects: a small red cube left and behind, then a large blue
// sphere, then a small red sphere in front on the right
pub const SMALL: &str = r#"{
  "objects": [
    {"color": "red", "shape": "cube", "size": "small", "material": "rubber"},
    {"color": "blue", "shape": "sphere", "size": "large", "material": "metal"},
    {"color": "red", "shape": "sphere", "size": "small", "material": "metal"}
  ],
  "relationships": {
    "left": [[], [0], [0, 1]],
    "right": [[1, 2], [2], []],
    "front": [[1, 2], [2], []],
    "behind": [[], [0], [0, 1]]
  }
}"#;

struct Stmt {
    op: OpKind,
    param: Option<&'static str>,
    args: Vec<usize>,
    ty: ValueType,
}

fn render(prog: &[Stmt]) -> String {
    prog.iter()
        .enumerate()
        .map(|(i, s)| {
            let param = s.param.map(|p| format!("[{p}]")).unwrap_or_default();
            let args: Vec<String> = s.args.iter().map(|a| format!("v{a}")).collect();
            format!("v{i} = {}{param}({})\n", s.op.name(), args.join(", "))
        })
        .collect()
}

fn choices(prog: &[Stmt]) -> Vec<Stmt> {
    let mut out = Vec::new();
    for op in OpKind::all() {
        let (want, ty) = op.signature();
        let params: Vec<Option<&'static str>> = match op.param_domain() {
            Some(d) => d.iter().map(|p| Some(*p)).collect(),
            None => vec![None],
        };
        let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
        for t in want {
            let fits: Vec<usize> = (0..prog.len()).filter(|&i| prog[i].ty == *t).collect();
            tuples = tuples
                .into_iter()
                .flat_map(|pre| {
                    fits.iter().map(move |&i| {
                        let mut p = pre.clone();
                        p.push(i);
                        p
                    })
                })
                .collect();
        }
        for p in &params {
            for args in &tuples {
                out.push(Stmt {
                    op: op.clone(),
                    param: *p,
                    args: args.clone(),
                    ty,
                });
            }
        }
    }
    out
}

/// Collects well-typed programs whose only unconsumed statement is the
/// answer-typed last one. Programs passing one statement twice to the same
/// operator go to `repeated`: two identical input edges collapse in the
/// model, so the validator must reject them.
fn enumerate(prog: &mut Vec<Stmt>, max: usize, found: &mut Vec<String>, repeated: &mut Vec<String>) {
    if !prog.is_empty() {
        let n = prog.len();
        let consumed = (0..n - 1).all(|i| prog.iter().any(|s| s.args.contains(&i)));
        let answer = matches!(prog[n - 1].ty, ValueType::Int | ValueType::Bool | ValueType::Val);
        if consumed && answer {
            if prog.iter().any(|s| s.args.len() == 2 && s.args[0] == s.args[1]) {
                repeated.push(render(prog));
            } else {
                found.push(render(prog));
            }
        }
    }
    if prog.len() == max {
        return;
    }
    for s in choices(prog) {
        prog.push(s);
        enumerate(prog, max, found, repeated);
        prog.pop();
    }
}

pub fn scene() -> Scene {
    load_scene(SCENE).unwrap()
}

/// Runs every hand-counted case; returns how many reproduced.
pub fn check_fixtures() -> Result<usize, String> {
    let s = scene();
    let assets = clevr_assets();
    for (program, want) in CASES {
        if !assets.validate(program.as_bytes()).semantic {
            return Err(format!("fixture is not a valid program:\n{program}"));
        }
        let got = execute(&parse_program(program).map_err(|e| e.to_string())?, &s);
        match (*want, got) {
            ("!non-unique", Err(ExecError::RuntimeNonUnique { size: 2, .. })) => {}
            (w, Ok(a)) if a == Answer::parse(w) => {}
            (w, Ok(a)) => return Err(format!("{program}: expected {w}, got {a}")),
            (w, Err(e)) => return Err(format!("{program}: expected {w}, got {e}")),
        }
    }
    Ok(CASES.len())
}

#[derive(Debug)]
pub struct Enumeration {
    pub programs: usize,
    pub answered: usize,
    pub non_unique: usize,
    pub repeated: usize,
}

/// Every well-typed program of at most four statements validates and runs
/// on the three-object scene; the only tolerated failure is a non-unique
/// `unique`. Programs repeating an argument must be rejected instead.
pub fn check_enumeration() -> Result<Enumeration, String> {
    let s = load_scene(SMALL).unwrap();
    let assets = clevr_assets();
    let (mut programs, mut repeated) = (Vec::new(), Vec::new());
    enumerate(&mut Vec::new(), 4, &mut programs, &mut repeated);
    for p in &repeated {
        if assets.validate(p.as_bytes()).semantic {
            return Err(format!("repeated argument accepted:\n{p}"));
        }
    }
    let mut e = Enumeration {
        programs: programs.len(),
        answered: 0,
        non_unique: 0,
        repeated: repeated.len(),
    };
    for p in &programs {
        if !assets.validate(p.as_bytes()).semantic {
            return Err(format!("enumerated program rejected:\n{p}"));
        }
        match execute(&parse_program(p).map_err(|e| e.to_string())?, &s) {
            Ok(_) => e.answered += 1,
            Err(ExecError::RuntimeNonUnique { .. }) => e.non_unique += 1,
            Err(err) => return Err(format!("{p}: {err}")),
        }
    }
    Ok(e)
}
