//! Prompt construction for every gateway call the pipelines make.
//!
//! Each system prompt carries a template tag so scripted mock providers can
//! target it; each user prompt ends with a machine-readable context block.

use serde_json::{json, Value};

use super::MetaDescription;
use crate::gateway::{context_block, tag_marker, ChatRequest, SchemaId};

pub const TAG_META: &str = "meta_derive";
pub const TAG_COOCCUR: &str = "icd_cooccur";
pub const TAG_ICD_NOTE: &str = "icd_note";
pub const TAG_ICD_LABEL: &str = "icd_label";
pub const TAG_CPT_EXTRA: &str = "cpt_extra";
pub const TAG_CPT_NOTE: &str = "cpt_note";
pub const TAG_CPT_DESCRIBE: &str = "cpt_describe";
pub const TAG_CPT_SELECT: &str = "cpt_select";

fn request(
    tag: &str,
    role: &str,
    user: String,
    ctx: Value,
    schema: SchemaId,
    seed: u64,
) -> ChatRequest {
    let system = format!(
        "{role} Respond only with JSON in the requested format. {}",
        tag_marker(tag)
    );
    ChatRequest::new(system, format!("{user}\n\n{}", context_block(&ctx)), schema).with_seed(seed)
}

pub fn meta(note: &str, sections: &[String], line_count: usize, seed: u64) -> ChatRequest {
    let user = format!(
        "Describe the documentation structure and writing style of the note below. \
         List its section labels in order, summarise style in one sentence and name the specialty. \
         Do not copy any patient-specific detail: no names, dates, identifiers, places or verbatim phrases.\n\
         Output format: {{\"structure\": [string], \"style_notes\": string, \"specialty\": string}}\n\n\
         NOTE:\n{note}"
    );
    let ctx = json!({ "sections": sections, "line_count": line_count });
    request(
        TAG_META,
        "You are a clinical documentation analyst.",
        user,
        ctx,
        SchemaId::MetaDescription,
        seed,
    )
}

pub fn cooccurring(
    seed_code: &str,
    seed_desc: &str,
    count: usize,
    candidates: &[String],
    seed: u64,
) -> ChatRequest {
    let user = format!(
        "A patient encounter has primary diagnosis {seed_code} ({seed_desc}). \
         Propose {count} additional ICD-10-CM codes that plausibly co-occur in the same encounter.\n\
         Output format: {{\"codes\": [string]}}"
    );
    let ctx = json!({ "seed": seed_code, "count": count, "candidates": candidates });
    request(
        TAG_COOCCUR,
        "You are an experienced clinical coder.",
        user,
        ctx,
        SchemaId::CodeSelection,
        seed,
    )
}

pub fn note(
    tag: &str,
    kind: &str,
    meta: &MetaDescription,
    codes: &[(String, String)],
    seed: u64,
) -> ChatRequest {
    let listing: String = codes.iter().map(|(c, d)| format!("- {c}: {d}\n")).collect();
    let user = format!(
        "Write a realistic {} note for a fictional patient.\n\
         Sections, in order: {}\nStyle: {}\nSpecialty: {}\n\
         The note must document each of the following so that a coder could assign it:\n{listing}\
         Invent no names, dates, phone numbers or other identifiers.\n\
         Output format: {{\"lines\": [string]}} with one note line per element.",
        if kind == "cpt" {
            "procedure"
        } else {
            "clinical"
        },
        meta.structure.join(", "),
        meta.style_notes,
        meta.specialty,
    );
    let ctx = json!({
        "kind": kind,
        "structure": meta.structure,
        "style_notes": meta.style_notes,
        "specialty": meta.specialty,
        "codes": codes.iter().map(|(c, d)| json!({"code": c, "description": d})).collect::<Vec<_>>(),
    });
    request(
        tag,
        "You are a physician writing clinical documentation.",
        user,
        ctx,
        SchemaId::NoteText,
        seed,
    )
}

pub fn icd_label(
    window: &[(usize, &str)],
    candidates: &[(String, String)],
    seed: u64,
) -> ChatRequest {
    let lines: String = window.iter().map(|(i, t)| format!("[{i}] {t}\n")).collect();
    let listing: String = candidates
        .iter()
        .map(|(c, d)| format!("- {c}: {d}\n"))
        .collect();
    let user = format!(
        "Assign the ICD-10-CM codes documented in these note lines. Choose only from the candidate list. \
         Cite the supporting line indices as evidence. Return [] if no candidate is documented.\n\
         Output format: [{{\"code\": string, \"rationale\": string, \"evidence\": {{\"line_index\": [int]}}}}]\n\n\
         LINES:\n{lines}\nCANDIDATES:\n{listing}"
    );
    let ctx = json!({
        "window": window.iter().map(|(i, t)| json!({"index": i, "text": t})).collect::<Vec<_>>(),
        "candidates": candidates.iter().map(|(c, d)| json!({"code": c, "description": d})).collect::<Vec<_>>(),
    });
    request(
        TAG_ICD_LABEL,
        "You are a certified medical coder.",
        user,
        ctx,
        SchemaId::IcdAssignments,
        seed,
    )
}

pub fn cpt_extra(
    seed_code: &str,
    seed_desc: &str,
    count: usize,
    candidates: &[String],
    seed: u64,
) -> ChatRequest {
    let user = format!(
        "A procedure note documents CPT {seed_code} ({seed_desc}). \
         Pick {count} other codes from the candidate list that are commonly performed in the same session.\n\
         Output format: {{\"codes\": [string]}}"
    );
    let ctx = json!({ "seed": seed_code, "count": count, "candidates": candidates });
    request(
        TAG_CPT_EXTRA,
        "You are an experienced procedural coder.",
        user,
        ctx,
        SchemaId::CodeSelection,
        seed,
    )
}

pub fn cpt_describe(lines: &[String], seed: u64) -> ChatRequest {
    let numbered: String = lines
        .iter()
        .enumerate()
        .map(|(i, t)| format!("[{i}] {t}\n"))
        .collect();
    let user = format!(
        "List every billable procedure performed in this note as a short procedural description. \
         Do not output CPT codes.\nOutput format: {{\"descriptions\": [string]}}\n\nNOTE:\n{numbered}"
    );
    let ctx = json!({ "lines": lines });
    request(
        TAG_CPT_DESCRIBE,
        "You are a procedural coding assistant.",
        user,
        ctx,
        SchemaId::DescriptionList,
        seed,
    )
}

/// `groups`: per description, its resolved candidates `(code, description, score)`.
pub fn cpt_select(
    groups: &[(String, Vec<(String, String, f64)>)],
    rejected: &[String],
    seed: u64,
) -> ChatRequest {
    let mut listing = String::new();
    for (desc, cands) in groups {
        listing.push_str(&format!("Description: {desc}\n"));
        for (c, d, s) in cands {
            listing.push_str(&format!("  - {c}: {d} (similarity {s:.3})\n"));
        }
    }
    let mut user = format!(
        "Select the final CPT code set for the note. Every selected code must appear in the candidate lists below.\n\
         Output format: {{\"codes\": [string]}}\n\n{listing}"
    );
    if !rejected.is_empty() {
        user.push_str(&format!(
            "\nYour previous selection included codes outside the candidate lists ({}). Choose only listed codes.",
            rejected.join(", ")
        ));
    }
    let ctx = json!({
        "groups": groups.iter().map(|(desc, cands)| json!({
            "description": desc,
            "candidates": cands.iter().map(|(c, d, s)| json!({"code": c, "description": d, "score": s})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "rejected": rejected,
    });
    request(
        TAG_CPT_SELECT,
        "You are a certified procedural coder.",
        user,
        ctx,
        SchemaId::CodeSelection,
        seed,
    )
}
