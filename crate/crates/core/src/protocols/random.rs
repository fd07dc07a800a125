//! Random straight-line clients over two 8-bit unknowns, for differential testing.

use alloc::format;
use alloc::string::String;

use rand::Rng;

fn operand<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..3) {
        0 => "a".into(),
        1 => "b".into(),
        _ => format!("{}", rng.gen_range(0..256u32)),
    }
}

fn value<R: Rng>(rng: &mut R) -> String {
    let (x, y) = (operand(rng), operand(rng));
    let op = ["+", "-", "^", "&", "|", "*"][rng.gen_range(0..6)];
    match rng.gen_range(0..4) {
        0 => x,
        1 => format!("({} {} {})", x, op, y),
        2 => format!("(a {} b)", op),
        _ => format!("(a % {})", rng.gen_range(1..16u32)),
    }
}

fn condition<R: Rng>(rng: &mut R) -> String {
    let cmp = ["<", "<=", "==", "!=", ">", ">="][rng.gen_range(0..6)];
    let lhs = match rng.gen_range(0..3) {
        0 => "a".into(),
        1 => "b".into(),
        _ => value(rng),
    };
    format!("{} {} {}", lhs, cmp, rng.gen_range(0..256u32))
}

fn send<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..3) {
        0 => format!("send(0x{:02x}u8);", rng.gen_range(0..256u32)),
        1 => format!("send(0x{:02x}u8, concat(a, b) ^ 0x{:04x});", rng.gen_range(0..256u32), rng.gen_range(0..65536u32)),
        _ => format!("let v: u8 = {}; send(v);", value(rng)),
    }
}

fn block<R: Rng>(rng: &mut R, depth: usize, branches: &mut u32, out: &mut String) {
    let indent = "    ".repeat(depth);
    let n = rng.gen_range(1..=3);
    for _ in 0..n {
        let r = rng.gen_range(0..10);
        if r < 4 && *branches > 0 && depth < 4 {
            *branches -= 1;
            out.push_str(&format!("{}if {} {{\n", indent, condition(rng)));
            block(rng, depth + 1, branches, out);
            out.push_str(&format!("{}}} else {{\n", indent));
            block(rng, depth + 1, branches, out);
            out.push_str(&format!("{}}}\n", indent));
        } else if r < 5 {
            out.push_str(&format!("{}a = {};\n", indent, value(rng)));
        } else {
            out.push_str(&format!("{}{}\n", indent, send(rng)));
        }
    }
}

/// A client with at most `max_branches` conditionals over the unknowns `a` and `b`.
pub fn random_client<R: Rng>(rng: &mut R, max_branches: u32) -> String {
    let mut branches = max_branches;
    let mut s = String::from("fn client() {\n    let a = sym_input(8);\n    let b = sym_input(8);\n");
    block(rng, 1, &mut branches, &mut s);
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{check_program, parse_program, NoExternals};
    use crate::symvm::Code;
    use rand::SeedableRng;

    #[test]
    fn generated_clients_are_well_formed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let src = random_client(&mut rng, 12);
            let p = parse_program(&src).unwrap_or_else(|e| panic!("{}\n{}", e, src));
            assert!(check_program(&p, &NoExternals).is_empty(), "{}", src);
            let branches = Code::compile(&p).unwrap().branch_count();
            assert!(branches <= 12, "{}", src);
        }
    }
}
