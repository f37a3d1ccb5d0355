//! Versioned prompt templates. Every prompt is a pure function of its inputs.

use crate::domain::VehicleId;
use crate::negotiation::{NegotiationContext, PassOrder};
use serde::{Deserialize, Serialize};
use std::fmt::Write;

pub const PROMPT_VERSION: &str = "v1";
pub const PRECEDENCE_SCHEMA: &str = "precedence_list.v1";
pub const MERGE_SCHEMA: &str = "merge_order.v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub expected_schema_id: String,
}

pub fn schema_text(schema_id: &str) -> Option<&'static str> {
    match schema_id {
        PRECEDENCE_SCHEMA => Some(
            r#"{"precedences": [{"first": <vehicle id>, "second": <vehicle id>, "reason": "<short text>"}]}"#,
        ),
        MERGE_SCHEMA => Some(r#"{"order": [{"id": <vehicle id>, "group": <group index>}]}"#),
        _ => None,
    }
}

fn member_block(ctx: &NegotiationContext, out: &mut String) {
    for m in &ctx.members {
        let _ = writeln!(
            out,
            "- vehicle {}: route {}, position ({:.1}, {:.1}) m, speed {:.2} m/s, {:.1} m to its next conflict point, earliest arrival {:.2} s",
            m.id, m.route, m.position.x, m.position.y, m.speed, m.distance, m.eta
        );
    }
}

fn conflict_block(ctx: &NegotiationContext, out: &mut String) {
    if ctx.conflicts.is_empty() {
        out.push_str("none\n");
    }
    for c in &ctx.conflicts {
        let _ = writeln!(
            out,
            "- pair ({}, {}) at conflict point {} ({:.1}, {:.1}): vehicle {} at {:.2} m/s is {:.1} m away; vehicle {} at {:.2} m/s is {:.1} m away",
            c.a, c.b, c.conflict_id, c.location.x, c.location.y, c.a, c.speed_a, c.distance_a, c.b, c.speed_b, c.distance_b
        );
    }
}

fn following_block(ctx: &NegotiationContext, out: &mut String) {
    if ctx.following.is_empty() {
        out.push_str("none\n");
    }
    for r in &ctx.following {
        let _ = writeln!(out, "- vehicle {} follows vehicle {} (gap {:.1} m)", r.follower, r.leader, r.gap);
    }
}

fn feedback_block(ctx: &NegotiationContext, out: &mut String) {
    if !ctx.feedback.is_empty() {
        out.push_str("\nProblems with earlier proposals:\n");
        for line in &ctx.feedback {
            let _ = writeln!(out, "- {line}");
        }
    }
}

fn reply_instruction(schema_id: &str, out: &mut String) {
    let _ = write!(
        out,
        "\nReply with a single JSON object and nothing else, using this shape:\n{}\n",
        schema_text(schema_id).expect("registered schema")
    );
}

const OPINION_SYSTEM: &str = "You are the driving agent of a connected automated vehicle approaching an \
unsignalized intersection. You decide, from your own vehicle's point of view and weighing its safety and \
efficiency, which vehicle of each conflicting pair should cross the shared conflict point first. Rules: use \
only the listed vehicles; a following vehicle never crosses before the vehicle it follows; the decisions must \
not form a cycle.";

const RESOLVE_SYSTEM: &str = "You are the coordinator of a group of connected automated vehicles at an \
unsignalized intersection. The vehicles disagreed on some conflicting pairs. Settle each disputed pair so the \
group can cross safely and without needless delay. Keep every agreed decision, never let a following vehicle \
cross before the vehicle it follows, and never create a cycle.";

const MERGE_SYSTEM: &str = "You are the roadside coordinator of an unsignalized intersection. Several vehicle \
groups have each agreed on an internal crossing order. Combine them into one crossing order for all vehicles.";

/// Prompt asking `ego` for its precedence on every conflict pair.
pub fn build_opinion_prompt(ctx: &NegotiationContext, ego: VehicleId) -> PromptBundle {
    let mut user = String::new();
    let _ = writeln!(user, "Prompt version {PROMPT_VERSION}. You are vehicle {ego}.\n");
    user.push_str("Vehicles in your group:\n");
    member_block(ctx, &mut user);
    user.push_str("\nConflicting pairs:\n");
    conflict_block(ctx, &mut user);
    user.push_str("\nLeader-follower relations:\n");
    following_block(ctx, &mut user);
    if !ctx.agreed.is_empty() {
        user.push_str("\nAlready agreed:\n");
        for (a, b) in &ctx.agreed {
            let _ = writeln!(user, "- {a} before {b}");
        }
    }
    feedback_block(ctx, &mut user);
    user.push_str("\nGive exactly one decision for each conflicting pair: the vehicle that should cross first and the one that crosses second.\n");
    reply_instruction(PRECEDENCE_SCHEMA, &mut user);
    PromptBundle {
        system_text: OPINION_SYSTEM.to_string(),
        user_text: user,
        expected_schema_id: PRECEDENCE_SCHEMA.to_string(),
    }
}

/// Prompt asking for one decision per disputed pair.
pub fn build_resolve_prompt(
    ctx: &NegotiationContext,
    disputed: &[(VehicleId, VehicleId)],
    agreed: &[(VehicleId, VehicleId)],
) -> PromptBundle {
    let mut user = String::new();
    let _ = writeln!(user, "Prompt version {PROMPT_VERSION}.\n");
    user.push_str("Vehicles in the group:\n");
    member_block(ctx, &mut user);
    user.push_str("\nConflicting pairs:\n");
    conflict_block(ctx, &mut user);
    user.push_str("\nLeader-follower relations:\n");
    following_block(ctx, &mut user);
    user.push_str("\nAgreed decisions:\n");
    if agreed.is_empty() {
        user.push_str("none\n");
    }
    for (a, b) in agreed {
        let _ = writeln!(user, "- {a} before {b}");
    }
    user.push_str("\nDisputed pairs:\n");
    for (a, b) in disputed {
        let _ = writeln!(user, "- ({a}, {b})");
    }
    feedback_block(ctx, &mut user);
    user.push_str("\nGive exactly one decision for each disputed pair and for no other pair.\n");
    reply_instruction(PRECEDENCE_SCHEMA, &mut user);
    PromptBundle {
        system_text: RESOLVE_SYSTEM.to_string(),
        user_text: user,
        expected_schema_id: PRECEDENCE_SCHEMA.to_string(),
    }
}

/// Prompt asking for the global order given every group's order.
pub fn build_merge_prompt(intra: &[PassOrder], ctx: &NegotiationContext) -> PromptBundle {
    let mut user = String::new();
    let _ = writeln!(user, "Prompt version {PROMPT_VERSION}.\n");
    user.push_str("(1) Crossing order agreed inside each group:\n");
    for (pos, order) in intra.iter().enumerate() {
        let ids: Vec<String> = order.ordered_ids.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(user, "- group {}: {}", order.scope.group_index().unwrap_or(pos), ids.join(", "));
    }
    user.push_str("\n(2) Conflicting pairs (speed and distance to the conflict point):\n");
    conflict_block(ctx, &mut user);
    user.push_str("\n(3) Leader-follower relations:\n");
    following_block(ctx, &mut user);
    user.push_str("\nVehicle states:\n");
    member_block(ctx, &mut user);
    feedback_block(ctx, &mut user);
    user.push_str(
        "\nRequirements:\n\
         1. A following vehicle must cross after the vehicle it follows.\n\
         2. Every listed vehicle appears exactly once, labelled with its own group.\n\
         3. Vehicles of the same group keep the relative order agreed inside that group.\n",
    );
    reply_instruction(MERGE_SCHEMA, &mut user);
    PromptBundle {
        system_text: MERGE_SYSTEM.to_string(),
        user_text: user,
        expected_schema_id: MERGE_SCHEMA.to_string(),
    }
}

/// Follow-up message sent once when a reply could not be parsed.
pub fn reformat_request(schema_id: &str, problem: &str) -> String {
    format!(
        "Your reply could not be used: {problem}. Answer again with only a JSON object of this shape:\n{}",
        schema_text(schema_id).unwrap_or("{}")
    )
}
