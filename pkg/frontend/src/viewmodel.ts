// Presentation mappings. The dashboard holds no business logic: statuses,
// scores, and flags are displayed verbatim from the API.

import type { CallSchedule, EscalationFlag } from "./types.js";

export type ChipColor = "green" | "blue" | "amber" | "red" | "gray";

export const STATUS_COLORS: Record<string, ChipColor> = {
  completed: "green",
  scheduled: "blue",
  in_progress: "amber",
  failed: "red",
  canceled: "gray",
};

export interface StatusChip {
  scheduleId: string;
  label: string;
  color: ChipColor;
  unknownStatus: boolean; // renders a warning badge
}

export function statusColor(status: string): { color: ChipColor; unknown: boolean } {
  const color = STATUS_COLORS[status];
  if (color === undefined) {
    return { color: "gray", unknown: true };
  }
  return { color, unknown: false };
}

export function scheduleChip(schedule: CallSchedule): StatusChip {
  const { color, unknown } = statusColor(schedule.status);
  return {
    scheduleId: schedule.id,
    label: `${schedule.status} · ${schedule.scheduled_at}`,
    color,
    unknownStatus: unknown,
  };
}

/** Chips for a patient's next few calls, in the API's due-time ordering. */
export function nextCallChips(schedules: CallSchedule[], limit = 5): StatusChip[] {
  return schedules.slice(0, limit).map(scheduleChip);
}

/** Emergency flags always sort above callback requests; ties keep id order. */
export function sortFlags(flags: EscalationFlag[]): EscalationFlag[] {
  const rank = (f: EscalationFlag) => (f.kind === "emergency" ? 0 : 1);
  return [...flags].sort((a, b) => rank(a) - rank(b) || a.id.localeCompare(b.id));
}

export interface LocalTime {
  year: number;
  month: number; // 1-12
  day: number;
  hour: number;
  minute: number;
}

function zoneOffsetMs(utcMs: number, timeZone: string): number {
  const formatter = new Intl.DateTimeFormat("en-US", {
    timeZone,
    year: "numeric",
    month: "2-digit",
    day: "2-digit",
    hour: "2-digit",
    minute: "2-digit",
    second: "2-digit",
    hour12: false,
  });
  const parts: Record<string, number> = {};
  for (const part of formatter.formatToParts(new Date(utcMs))) {
    if (part.type !== "literal") {
      parts[part.type] = Number(part.value);
    }
  }
  const asUtc = Date.UTC(
    parts.year,
    parts.month - 1,
    parts.day,
    parts.hour % 24,
    parts.minute,
    parts.second,
  );
  return asUtc - utcMs;
}

/**
 * Convert a wall-clock time in an IANA zone to a UTC instant (RFC 3339 Z).
 * Two-pass offset correction handles DST boundaries deterministically.
 */
export function localToUtc(local: LocalTime, timeZone: string): string {
  const wallClockAsUtc = Date.UTC(
    local.year,
    local.month - 1,
    local.day,
    local.hour,
    local.minute,
    0,
  );
  let guess = wallClockAsUtc - zoneOffsetMs(wallClockAsUtc, timeZone);
  guess = wallClockAsUtc - zoneOffsetMs(guess, timeZone);
  return new Date(guess).toISOString().replace(".000Z", "Z");
}

/** Parse the value of an <input type="datetime-local"> into LocalTime. */
export function parseDatetimeLocal(value: string): LocalTime | null {
  const match = /^(\d{4})-(\d{2})-(\d{2})T(\d{2}):(\d{2})/.exec(value);
  if (!match) {
    return null;
  }
  return {
    year: Number(match[1]),
    month: Number(match[2]),
    day: Number(match[3]),
    hour: Number(match[4]),
    minute: Number(match[5]),
  };
}

export interface CreateCallRequest {
  scheduled_at: string;
  instrument_ids: string[];
}

/**
 * The add-call form's request body: wall-clock picker value interpreted in
 * the patient's timezone, emitted as a UTC instant. Null when the picker
 * value does not parse.
 */
export function buildCallRequest(
  datetimeLocalValue: string,
  timeZone: string,
  instrumentIds: string[],
): CreateCallRequest | null {
  const local = parseDatetimeLocal(datetimeLocalValue);
  if (!local) {
    return null;
  }
  return {
    scheduled_at: localToUtc(local, timeZone),
    instrument_ids: instrumentIds,
  };
}

export function formatDuration(totalSeconds: number): string {
  const minutes = Math.floor(totalSeconds / 60);
  const seconds = totalSeconds % 60;
  return minutes > 0 ? `${minutes}m ${seconds}s` : `${seconds}s`;
}
