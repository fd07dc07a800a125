use alloc::format;
use alloc::string::String;

pub const PAPER_EXAMPLE: &str = "\
fn client() {
    let x = sym_input(16);
    let y = sym_input(16);
    let iv = sym_input(16);
    let p = x * y;
    if x % 2 == 1 {
        if (y & 1) == 1 {
            let s = PAPERCIPHER(iv);
            let c = p ^ s;
            send(iv, c);
        }
    }
}
";

fn handshake(nonce_line: &str) -> String {
    format!(
        "\
fn client() {{
    let a = sym_input(16);
    let pub = TOYDH(a);
    let nonce = sym_input(16);
    {nonce_line}
    send(0x01u8, n, pub);
    let sh: buf[4] = zeros(4);
    recv(sh);
    let b = concat(sh[2], sh[3]);
    let k = MASTER(a ^ b);
    let t: buf[6] = zeros(6);
    t[0] = extract(n, 8, 15);
    t[1] = extract(n, 0, 7);
    t[2] = sh[0];
    t[3] = sh[1];
    t[4] = extract(pub, 8, 15);
    t[5] = extract(pub, 0, 7);
    let mac = TOYMAC(k, t);
    send(0x14u8, mac);
    let iv = sym_input(16);
    let pad = TOYBLOCK(k, iv);
    let data = sym_input(16);
    send(0x17u8, iv, data ^ pad);
}}
"
    )
}

/// Handshake whose nonce carries a set top bit.
pub fn toy_handshake() -> String {
    handshake("let n = nonce | 0x8000;")
}

/// Same handshake with the top nonce bit cleared.
pub fn toy_handshake_v2() -> String {
    handshake("let n = nonce & 0x7fff;")
}

pub const ECHO_HEARTBEAT: &str = "\
fn client() {
    let id = sym_input(16);
    send(0x16u8, id);
    let h: u8 = 0;
    while h < 2 {
        let want = sym_input(8);
        let payload = sym_bytes(16);
        if want > 16 {
            return;
        }
        let n: u8 = 0;
        while n < want {
            n = n + 1;
        }
        let body = slice(payload, 0, n);
        send(0x18u8, n, body);
        let echo: buf[18] = zeros(18);
        recv(echo);
        h = h + 1;
    }
}
";

pub const KEYEX_STATEMACHINE: &str = "\
fn client() {
    let hello = sym_input(16);
    send(0x01u8, hello);
    let req: buf[2] = zeros(2);
    recv(req);
    if req[0] == 1 {
        let cert = sym_bytes(4);
        send(0x0bu8, cert);
        send(0x10u8, 0x00u8);
    } else {
        let a = sym_input(16);
        let pub = TOYDH(a);
        send(0x10u8, 0x02u8, pub);
    }
    send(0x14u8, hello);
}
";

/// Records of up to 8 plaintext bytes plus up to `pad - 1` padding bytes,
/// encrypted with a counter-mode keystream. `pad` must be a power of two.
pub fn padded_records(pad: u32, records: u32) -> String {
    let n = 8 + pad;
    let blocks = n / 2;
    format!(
        "\
fn client() {{
    let seed = sym_input(16);
    let k = MASTER(seed);
    let r: u16 = 0;
    while r < {records} {{
        let ks: buf[{n}] = zeros({n});
        let i: u16 = 0;
        while i < {blocks} {{
            let b = TOYBLOCK(k, r * {blocks} + i);
            ks[i + i] = extract(b, 8, 15);
            ks[i + i + 1] = extract(b, 0, 7);
            i = i + 1;
        }}
        let plen = sym_input(8);
        let padlen = sym_input(8);
        let pt = sym_bytes(8);
        let pad = sym_bytes({pad});
        if plen > 8 {{
            return;
        }}
        if padlen >= {pad} {{
            return;
        }}
        let body: buf[{n}] = zeros({n});
        let p: u16 = 0;
        while p < plen {{
            body[p] = pt[p] ^ ks[p];
            p = p + 1;
        }}
        let m: u16 = 0;
        while m < padlen {{
            body[p + m] = pad[m] ^ ks[p + m];
            m = m + 1;
        }}
        let total: u16 = p + m;
        let out = slice(body, 0, total);
        send(0x17u8, total, out);
        r = r + 1;
    }}
}}
"
    )
}

/// The server names each chunk size; the client answers with that many bytes.
pub fn bulk_transfer(requests: u32) -> String {
    format!(
        "\
fn client() {{
    let q: u16 = 0;
    while q < {requests} {{
        let req: buf[2] = zeros(2);
        recv(req);
        let size = concat(req[0], req[1]);
        let data = sym_bytes(1024);
        let out: buf[1024] = zeros(1024);
        let j: u16 = 0;
        while j < size {{
            out[j] = data[j] ^ extract(j, 0, 7);
            j = j + 1;
        }}
        let chunk = slice(out, 0, size);
        send(0x17u8, size, chunk);
        q = q + 1;
    }}
}}
"
    )
}

pub const CBC_BLOCKS: &str = "\
fn client() {
    let seed = sym_input(16);
    let k = MASTER(seed);
    let iv = sym_input(16);
    let p0 = sym_input(16);
    let p1 = sym_input(16);
    let p2 = sym_input(16);
    let p3 = sym_input(16);
    let p4 = sym_input(16);
    let c0 = TOYBLOCK(k, p0 ^ iv);
    let c1 = TOYBLOCK(k, p1 ^ c0);
    let c2 = TOYBLOCK(k, p2 ^ c1);
    let c3 = TOYBLOCK(k, p3 ^ c2);
    let c4 = TOYBLOCK(k, p4 ^ c3);
    let check = p0 * p1 * p2 * p3 * p4;
    send(iv, c0, c1, c2, c3, c4, check);
}
";
