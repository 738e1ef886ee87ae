// HTML renderers. Pure functions from API data to markup strings, so the
// same code is unit-testable without a browser.

import type {
  CallSchedule,
  CallSummary,
  EscalationFlag,
  Instrument,
  Patient,
  Transcript,
} from "./types.js";
import {
  formatDuration,
  nextCallChips,
  sortFlags,
  type StatusChip,
} from "./viewmodel.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function chipHtml(chip: StatusChip): string {
  const warning = chip.unknownStatus ? `<span class="warning-badge" title="unknown status">?</span>` : "";
  return (
    `<span class="chip chip-${chip.color}" data-schedule="${escapeHtml(chip.scheduleId)}">` +
    `${escapeHtml(chip.label)}${warning}</span>`
  );
}

export function retryBannerHtml(message: string): string {
  return (
    `<div class="banner banner-error">` +
    `<span>${escapeHtml(message)}</span> ` +
    `<button data-action="retry">Retry</button></div>`
  );
}

export function patientListHtml(
  patients: Patient[],
  callsByPatient: Map<string, CallSchedule[]>,
): string {
  const rows = patients
    .map((patient) => {
      const chips = nextCallChips(callsByPatient.get(patient.id) ?? []);
      const chipCell = chips.length
        ? chips.map(chipHtml).join(" ")
        : `<span class="placeholder">no calls scheduled</span>`;
      return (
        `<tr data-patient="${escapeHtml(patient.id)}">` +
        `<td><a href="#/patients/${encodeURIComponent(patient.id)}">${escapeHtml(patient.display_name)}</a></td>` +
        `<td>${escapeHtml(patient.phone)}</td>` +
        `<td>${escapeHtml(patient.preferred_modality)}</td>` +
        `<td>${chipCell}</td></tr>`
      );
    })
    .join("\n");
  return `<table class="patients">
<thead><tr><th>Patient</th><th>Phone</th><th>Modality</th><th>Upcoming calls</th></tr></thead>
<tbody>${rows}</tbody>
</table>`;
}

export function patientEditorHtml(patient: Patient, instruments: Instrument[]): string {
  const options = instruments
    .map(
      (instrument) =>
        `<label><input type="checkbox" name="instrument" value="${escapeHtml(instrument.id)}"> ` +
        `${escapeHtml(instrument.title)}</label>`,
    )
    .join("\n");
  return `<form id="patient-editor" data-patient="${escapeHtml(patient.id)}">
  <label>Name <input name="display_name" value="${escapeHtml(patient.display_name)}"></label>
  <label>Phone <input name="phone" value="${escapeHtml(patient.phone)}"><span class="field-error" data-field="phone"></span></label>
  <label>Timezone <input name="timezone" value="${escapeHtml(patient.timezone)}"><span class="field-error" data-field="timezone"></span></label>
  <button data-action="save-patient">Save</button>
</form>
<form id="add-call" data-patient="${escapeHtml(patient.id)}" data-timezone="${escapeHtml(patient.timezone)}">
  <fieldset>${options}</fieldset>
  <label>When (${escapeHtml(patient.timezone)}) <input type="datetime-local" name="scheduled_local"></label>
  <button data-action="add-call">Add call</button>
  <span class="field-error" data-field="instrument_ids"></span>
</form>`;
}

export function transcriptHtml(transcript: Transcript): string {
  const bubbles = transcript.turns
    .map(
      (turn) =>
        `<div class="bubble bubble-${escapeHtml(turn.speaker)}">` +
        `<span class="who">${escapeHtml(turn.speaker)}</span>` +
        `<p>${escapeHtml(turn.text)}</p></div>`,
    )
    .join("\n");
  return `<div class="transcript" data-session="${escapeHtml(transcript.session_id)}">${bubbles}</div>`;
}

export function summaryCardHtml(summary: CallSummary | null): string {
  if (summary === null) {
    return `<div class="summary-card pending">summary pending</div>`;
  }
  const results = summary.instrument_results
    .map((result) => {
      const score =
        result.score !== null
          ? `${result.score} (complete)`
          : `incomplete (${Math.round(result.completeness * 100)}%)`;
      return (
        `<li><strong>${escapeHtml(result.instrument_id)}</strong>: ${escapeHtml(score)}` +
        `<br><em>${escapeHtml(result.reasoning)}</em></li>`
      );
    })
    .join("\n");
  const badges = [
    summary.emergency.flagged
      ? `<span class="badge badge-red">emergency${
          summary.emergency.reason ? `: ${escapeHtml(summary.emergency.reason)}` : ""
        }</span>`
      : "",
    summary.callback_requested ? `<span class="badge badge-amber">callback requested</span>` : "",
  ]
    .filter(Boolean)
    .join(" ");
  return `<div class="summary-card" data-schedule="${escapeHtml(summary.schedule_id)}">
  <div class="duration">Duration: ${escapeHtml(formatDuration(summary.duration_seconds))}</div>
  <ul class="results">${results}</ul>
  <div class="flags">${badges}</div>
  <p class="overview">${escapeHtml(summary.overview)}</p>
</div>`;
}

export function flagQueueHtml(flags: EscalationFlag[]): string {
  const rows = sortFlags(flags)
    .map(
      (flag) =>
        `<li class="flag flag-${escapeHtml(flag.kind)}" data-flag="${escapeHtml(flag.id)}">` +
        `<span class="badge badge-${flag.kind === "emergency" ? "red" : "amber"}">${escapeHtml(flag.kind)}</span> ` +
        `<span>${escapeHtml(flag.reason)}</span> ` +
        `<span class="schedule-ref">${escapeHtml(flag.schedule_id)}</span> ` +
        (flag.acknowledged
          ? `<span class="acked">acknowledged</span>`
          : `<button data-action="ack-flag" data-flag-id="${escapeHtml(flag.id)}">Acknowledge</button>`) +
        `</li>`,
    )
    .join("\n");
  return `<ul class="flag-queue">${rows}</ul>`;
}
