//! C interface to the genotype codec, the shared noise table and policy
//! evaluation.
//!
//! Objects are opaque handles created by `*_new` / `*_from_*` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! status code (`DGA_OK` on success) and writes results through out-pointers.
//! Handles are not thread-safe for mutation; read-only use from several
//! threads is fine.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use deepga::genome::{ratio_for, reconstruct_with, CodecError, CodecMode, Genotype};
use deepga::noise::{NoiseTable, Seed};
use deepga::policy::{Network, PolicySpec};

pub const DGA_OK: i32 = 0;
pub const DGA_NULL_POINTER: i32 = 1;
pub const DGA_INVALID_ARGUMENT: i32 = 2;
pub const DGA_BUFFER_TOO_SMALL: i32 = 3;
pub const DGA_PANIC: i32 = 4;
pub const DGA_CODEC_BAD_MAGIC: i32 = 10;
pub const DGA_CODEC_TRUNCATED: i32 = 11;
pub const DGA_CODEC_SEED_OUT_OF_RANGE: i32 = 12;
pub const DGA_CODEC_BAD_MODE: i32 = 13;
pub const DGA_CODEC_BAD_SIGMA: i32 = 14;
pub const DGA_CODEC_TRAILING_BYTES: i32 = 15;
pub const DGA_NOISE_ERROR: i32 = 30;
pub const DGA_SHAPE_ERROR: i32 = 31;

/// Read-only table of standard-normal values.
pub struct DgaNoiseTable(NoiseTable);

/// Seed-chain genotype.
pub struct DgaGenotype(Genotype);

/// Compiled policy network.
pub struct DgaPolicy(Network);

fn guard(f: impl FnOnce() -> Result<(), i32>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DGA_OK,
        Ok(Err(code)) => code,
        Err(_) => DGA_PANIC,
    }
}

fn codec(e: CodecError) -> i32 {
    e.code()
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, i32> {
    p.as_ref().ok_or(DGA_NULL_POINTER)
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), i32> {
    if out.is_null() {
        return Err(DGA_NULL_POINTER);
    }
    out.write(value);
    Ok(())
}

unsafe fn input<'a, T>(p: *const T, len: usize) -> Result<&'a [T], i32> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(DGA_NULL_POINTER);
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], i32> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(DGA_NULL_POINTER);
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn seed(v: u32) -> Result<Seed, i32> {
    Seed::new(v).map_err(|_| DGA_CODEC_SEED_OUT_OF_RANGE)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn dga_status_message(code: i32) -> *const c_char {
    let msg: &'static CStr = match code {
        DGA_OK => c"ok",
        DGA_NULL_POINTER => c"null pointer",
        DGA_INVALID_ARGUMENT => c"invalid argument",
        DGA_BUFFER_TOO_SMALL => c"buffer too small",
        DGA_PANIC => c"internal error",
        DGA_CODEC_BAD_MAGIC => c"genotype: bad magic",
        DGA_CODEC_TRUNCATED => c"genotype: truncated",
        DGA_CODEC_SEED_OUT_OF_RANGE => c"seed exceeds 28 bits",
        DGA_CODEC_BAD_MODE => c"genotype: unknown codec mode",
        DGA_CODEC_BAD_SIGMA => c"mutation power must be positive and finite",
        DGA_CODEC_TRAILING_BYTES => c"genotype: trailing bytes",
        DGA_NOISE_ERROR => c"noise table error",
        DGA_SHAPE_ERROR => c"shape mismatch",
        _ => c"unknown status",
    };
    msg.as_ptr()
}

// ---- noise table ----

/// Builds a table of `size` values from a 28-bit master seed.
#[no_mangle]
pub unsafe extern "C" fn dga_noise_table_new(master_seed: u32, size: usize, out: *mut *mut DgaNoiseTable) -> i32 {
    guard(|| {
        let table = NoiseTable::build(seed(master_seed)?, size).map_err(|_| DGA_NOISE_ERROR)?;
        put(out, boxed(DgaNoiseTable(table)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dga_noise_table_len(table: *const DgaNoiseTable, out: *mut usize) -> i32 {
    guard(|| put(out, get(table)?.0.len()))
}

/// FNV-1a checksum over the table's bytes, as exchanged in worker handshakes.
#[no_mangle]
pub unsafe extern "C" fn dga_noise_table_checksum(table: *const DgaNoiseTable, out: *mut u64) -> i32 {
    guard(|| put(out, get(table)?.0.checksum()))
}

#[no_mangle]
pub unsafe extern "C" fn dga_noise_table_free(table: *mut DgaNoiseTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

// ---- genotypes ----

/// A genotype with an empty mutation chain. `hash_extended` selects the
/// hash-extended noise indexing.
#[no_mangle]
pub unsafe extern "C" fn dga_genotype_new(
    init_seed: u32,
    sigma: f64,
    hash_extended: bool,
    out: *mut *mut DgaGenotype,
) -> i32 {
    guard(|| {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(DGA_CODEC_BAD_SIGMA);
        }
        let mode = if hash_extended {
            CodecMode::HashExtended
        } else {
            CodecMode::Direct
        };
        put(out, boxed(DgaGenotype(Genotype::new(seed(init_seed)?, sigma, mode))))
    })
}

/// Appends one mutation seed to the chain.
#[no_mangle]
pub unsafe extern "C" fn dga_genotype_push(genotype: *mut DgaGenotype, mutation_seed: u32) -> i32 {
    guard(|| {
        let g = genotype.as_mut().ok_or(DGA_NULL_POINTER)?;
        g.0.mutation_seeds.push(seed(mutation_seed)?);
        Ok(())
    })
}

/// Parses a "DGN1" blob.
#[no_mangle]
pub unsafe extern "C" fn dga_genotype_from_bytes(bytes: *const u8, len: usize, out: *mut *mut DgaGenotype) -> i32 {
    guard(|| {
        let g = Genotype::from_bytes(input(bytes, len)?).map_err(codec)?;
        put(out, boxed(DgaGenotype(g)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn dga_genotype_serialized_len(genotype: *const DgaGenotype, out: *mut usize) -> i32 {
    guard(|| put(out, get(genotype)?.0.serialized_len()))
}

/// Writes the "DGN1" blob into `buf`. `written` receives the blob size; when
/// `cap` is too small nothing is written and `DGA_BUFFER_TOO_SMALL` returned.
#[no_mangle]
pub unsafe extern "C" fn dga_genotype_to_bytes(
    genotype: *const DgaGenotype,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> i32 {
    guard(|| {
        let bytes = get(genotype)?.0.to_bytes();
        put(written, bytes.len())?;
        if cap < bytes.len() {
            return Err(DGA_BUFFER_TOO_SMALL);
        }
        output(buf, bytes.len())?.copy_from_slice(&bytes);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dga_genotype_chain_length(genotype: *const DgaGenotype, out: *mut usize) -> i32 {
    guard(|| put(out, get(genotype)?.0.mutation_seeds.len()))
}

#[no_mangle]
pub unsafe extern "C" fn dga_genotype_sigma(genotype: *const DgaGenotype, out: *mut f64) -> i32 {
    guard(|| put(out, get(genotype)?.0.sigma))
}

#[no_mangle]
pub unsafe extern "C" fn dga_genotype_free(genotype: *mut DgaGenotype) {
    if !genotype.is_null() {
        drop(Box::from_raw(genotype));
    }
}

// ---- policies ----

unsafe fn new_policy(spec: PolicySpec, out: *mut *mut DgaPolicy) -> Result<(), i32> {
    let net = spec.compile().map_err(|_| DGA_SHAPE_ERROR)?;
    put(out, boxed(DgaPolicy(net)))
}

/// The default maze network: two conv layers and two dense layers over an
/// 84x84x4 frame stack, two tanh outputs.
#[no_mangle]
pub unsafe extern "C" fn dga_policy_new_desk_maze(out: *mut *mut DgaPolicy) -> i32 {
    guard(|| new_policy(PolicySpec::desk_maze(), out))
}

/// The large DQN-shaped network over an 84x84x4 frame stack.
#[no_mangle]
pub unsafe extern "C" fn dga_policy_new_dqn(outputs: usize, out: *mut *mut DgaPolicy) -> i32 {
    guard(|| new_policy(PolicySpec::dqn(outputs), out))
}

/// Fully connected ReLU network with a tanh head.
#[no_mangle]
pub unsafe extern "C" fn dga_policy_new_mlp(
    inputs: usize,
    hidden: *const usize,
    hidden_len: usize,
    outputs: usize,
    out: *mut *mut DgaPolicy,
) -> i32 {
    guard(|| new_policy(PolicySpec::mlp(inputs, input(hidden, hidden_len)?, outputs), out))
}

#[no_mangle]
pub unsafe extern "C" fn dga_policy_param_count(policy: *const DgaPolicy, out: *mut usize) -> i32 {
    guard(|| put(out, get(policy)?.0.param_count()))
}

#[no_mangle]
pub unsafe extern "C" fn dga_policy_input_len(policy: *const DgaPolicy, out: *mut usize) -> i32 {
    guard(|| put(out, get(policy)?.0.input().len()))
}

#[no_mangle]
pub unsafe extern "C" fn dga_policy_output_len(policy: *const DgaPolicy, out: *mut usize) -> i32 {
    guard(|| put(out, get(policy)?.0.output_len()))
}

/// Runs the network on one observation.
#[no_mangle]
pub unsafe extern "C" fn dga_policy_forward(
    policy: *const DgaPolicy,
    theta: *const f32,
    theta_len: usize,
    obs: *const f32,
    obs_len: usize,
    action: *mut f32,
    action_len: usize,
) -> i32 {
    guard(|| {
        let p = get(policy)?;
        let y = p
            .0
            .forward(input(theta, theta_len)?, input(obs, obs_len)?)
            .map_err(|_| DGA_SHAPE_ERROR)?;
        if action_len != y.len() {
            return Err(DGA_SHAPE_ERROR);
        }
        output(action, action_len)?.copy_from_slice(&y);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dga_policy_free(policy: *mut DgaPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

// ---- reconstruction ----

/// Rebuilds the parameter vector of `genotype` for `policy` into `theta`,
/// which must hold exactly the policy's parameter count.
#[no_mangle]
pub unsafe extern "C" fn dga_reconstruct(
    genotype: *const DgaGenotype,
    policy: *const DgaPolicy,
    table: *const DgaNoiseTable,
    theta: *mut f32,
    theta_len: usize,
) -> i32 {
    guard(|| {
        let (g, p, t) = (get(genotype)?, get(policy)?, get(table)?);
        if theta_len != p.0.param_count() {
            return Err(DGA_SHAPE_ERROR);
        }
        let out = output(theta, theta_len)?;
        let v = reconstruct_with(&g.0, &p.0, &t.0).map_err(|_| DGA_NOISE_ERROR)?;
        out.copy_from_slice(&v);
        Ok(())
    })
}

/// Parameter bytes (4 per parameter) over serialized genotype bytes.
#[no_mangle]
pub unsafe extern "C" fn dga_compression_ratio(
    genotype: *const DgaGenotype,
    policy: *const DgaPolicy,
    out: *mut f64,
) -> i32 {
    guard(|| {
        put(out, ratio_for(get(policy)?.0.param_count(), &get(genotype)?.0))
    })
}
