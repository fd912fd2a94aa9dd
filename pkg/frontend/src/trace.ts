// Turn-trace rendering: per-attempt plan steps, a candidate funnel built
// from the per-tool remaining counts, and the critic verdicts. Produces an
// HTML string so it stays testable without a browser.

import { SUPPORTED_TRACE_VERSION, type Attempt, type TurnTrace } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderAttempt(attempt: Attempt, index: number, total: number): string {
  const parts: string[] = [];
  const label = total > 1 ? `Attempt ${index + 1} of ${total}` : "Attempt";
  parts.push(`<section class="attempt"><h3>${label}</h3>`);

  if (attempt.plan.length === 0) {
    parts.push(`<p class="placeholder">no tools used</p>`);
  } else {
    parts.push(`<ol class="plan">`);
    for (const step of attempt.plan) {
      const input = step.input ? ` <code>${escapeHtml(step.input)}</code>` : "";
      parts.push(`<li class="plan-step"><b>${escapeHtml(step.tool)}</b>${input}</li>`);
    }
    parts.push(`</ol>`);
  }

  if (attempt.records.length > 0) {
    parts.push(`<table class="funnel"><tr><th>tool</th><th>candidates left</th><th></th></tr>`);
    for (const record of attempt.records) {
      const summary = record.output_summary;
      const remaining = summary.remaining ?? "";
      let note = "";
      if (summary.error) {
        note = `<span class="error">${escapeHtml(String(summary.error))}</span>`;
      } else if (summary.titles) {
        note = escapeHtml(summary.titles.join(", "));
      } else if (summary.warnings && summary.warnings.length > 0) {
        note = escapeHtml(summary.warnings.join("; "));
      }
      parts.push(
        `<tr class="funnel-row"><td>${escapeHtml(record.tool_name)}</td>` +
          `<td class="count">${remaining}</td><td>${note}</td></tr>`,
      );
    }
    parts.push(`</table>`);
  }

  const judgment = attempt.judgment;
  if (judgment) {
    if (judgment.verdict === "positive") {
      parts.push(`<p class="judgment positive">critic: positive</p>`);
    } else {
      const kind = judgment.synthetic ? "validation" : "critic";
      parts.push(
        `<div class="judgment negative"><p>${kind}: negative</p>` +
          `<blockquote>${escapeHtml(judgment.feedback)}</blockquote></div>`,
      );
    }
  }
  parts.push(`</section>`);
  return parts.join("\n");
}

export function renderTraceHtml(trace: TurnTrace | Record<string, unknown>): string {
  if ((trace as { trace_version?: number }).trace_version !== SUPPORTED_TRACE_VERSION) {
    // unknown schema: show the raw payload rather than guessing
    return `<pre class="raw-trace">${escapeHtml(JSON.stringify(trace, null, 2))}</pre>`;
  }
  const turn = trace as TurnTrace;
  const parts: string[] = [
    `<header class="trace-header">turn ${turn.turn_id} · ` +
      `${turn.actor_calls} actor + ${turn.critic_calls} critic calls` +
      `${turn.gave_up ? " · gave up" : ""}</header>`,
  ];
  turn.attempts.forEach((attempt, i) => {
    parts.push(renderAttempt(attempt, i, turn.attempts.length));
  });
  if (turn.attempts.length === 0) {
    parts.push(`<p class="placeholder">no tools used</p>`);
  }
  return parts.join("\n");
}

/** Tool names of the final attempt's plan, in plan order (funnel headline). */
export function planToolNames(trace: TurnTrace): string[] {
  const last = trace.attempts[trace.attempts.length - 1];
  return last ? last.plan.map((s) => s.tool) : [];
}
