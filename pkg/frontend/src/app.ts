// Single-page glue: hash routing, 15 s polling, optimistic flag acks.

import { ApiClient, ApiError } from "./api.js";
import type { CallSchedule, EscalationFlag, Patient } from "./types.js";
import { buildCallRequest } from "./viewmodel.js";
import {
  flagQueueHtml,
  patientEditorHtml,
  patientListHtml,
  retryBannerHtml,
  summaryCardHtml,
  transcriptHtml,
} from "./views.js";

const REFRESH_MS = 15_000;

declare global {
  interface Window {
    OUTREACH_BASE_URL?: string;
    OUTREACH_TOKEN?: string;
  }
}

export class Dashboard {
  private readonly api: ApiClient;
  private timer: number | undefined;

  constructor(
    private readonly root: HTMLElement,
    api?: ApiClient,
  ) {
    this.api =
      api ??
      new ApiClient({
        baseUrl: window.OUTREACH_BASE_URL ?? "",
        token: window.OUTREACH_TOKEN,
      });
  }

  start(): void {
    window.addEventListener("hashchange", () => void this.render());
    this.root.addEventListener("click", (event) => void this.onClick(event));
    this.root.addEventListener("submit", (event) => event.preventDefault());
    this.timer = window.setInterval(() => void this.render(), REFRESH_MS);
    void this.render();
  }

  stop(): void {
    if (this.timer !== undefined) {
      window.clearInterval(this.timer);
    }
  }

  private route(): { page: string; arg?: string } {
    const hash = window.location.hash;
    const patient = /^#\/patients\/(.+)$/.exec(hash);
    if (patient) return { page: "patient", arg: decodeURIComponent(patient[1]) };
    const call = /^#\/calls\/(.+)$/.exec(hash);
    if (call) return { page: "call", arg: decodeURIComponent(call[1]) };
    if (hash === "#/flags") return { page: "flags" };
    return { page: "patients" };
  }

  async render(): Promise<void> {
    const { page, arg } = this.route();
    try {
      if (page === "patient" && arg) {
        await this.renderPatient(arg);
      } else if (page === "call" && arg) {
        await this.renderCall(arg);
      } else if (page === "flags") {
        await this.renderFlags();
      } else {
        await this.renderPatientList();
      }
    } catch (error) {
      // API failures always leave a retry banner, never a blank page.
      const message = error instanceof Error ? error.message : String(error);
      this.root.innerHTML = retryBannerHtml(`Could not reach the API: ${message}`);
    }
  }

  private nav(): string {
    return `<nav><a href="#/">Patients</a> | <a href="#/flags">Flags</a></nav>`;
  }

  private async renderPatientList(): Promise<void> {
    const [patients, calls] = await Promise.all([this.api.listPatients(), this.api.listCalls()]);
    const byPatient = new Map<string, CallSchedule[]>();
    for (const call of calls) {
      const bucket = byPatient.get(call.patient_id) ?? [];
      bucket.push(call);
      byPatient.set(call.patient_id, bucket);
    }
    this.root.innerHTML = this.nav() + patientListHtml(patients, byPatient);
  }

  private async renderPatient(patientId: string): Promise<void> {
    const [patient, instruments, calls] = await Promise.all([
      this.api.getPatient(patientId),
      this.api.listInstruments(),
      this.api.listCalls({ patient_id: patientId }),
    ]);
    const callLinks = calls
      .map(
        (c) =>
          `<li><a href="#/calls/${encodeURIComponent(c.id)}">${c.id}</a> (${c.status})` +
          (c.status === "scheduled"
            ? ` <button data-action="cancel-call" data-schedule-id="${c.id}">Cancel</button>`
            : "") +
          `</li>`,
      )
      .join("");
    this.root.innerHTML =
      this.nav() + patientEditorHtml(patient, instruments) + `<ul class="calls">${callLinks}</ul>`;
  }

  private async renderCall(scheduleId: string): Promise<void> {
    const transcript = await this.api.getTranscript(scheduleId).catch(() => null);
    const summary = await this.api.getSummary(scheduleId).catch(() => null);
    this.root.innerHTML =
      this.nav() +
      (transcript ? transcriptHtml(transcript) : `<p>no transcript yet</p>`) +
      summaryCardHtml(summary);
  }

  private async renderFlags(): Promise<void> {
    const flags = await this.api.listFlags();
    this.root.innerHTML = this.nav() + flagQueueHtml(flags);
  }

  private async onClick(event: Event): Promise<void> {
    const target = event.target as HTMLElement | null;
    if (!target) return;
    const action = target.dataset.action;
    if (!action) return;
    event.preventDefault();
    if (action === "retry") {
      await this.render();
    } else if (action === "ack-flag") {
      await this.ackFlag(target.dataset.flagId ?? "", target);
    } else if (action === "cancel-call") {
      await this.api.cancelCall(target.dataset.scheduleId ?? "");
      await this.render();
    } else if (action === "save-patient") {
      await this.savePatient(target.closest("form") as HTMLFormElement);
    } else if (action === "add-call") {
      await this.addCall(target.closest("form") as HTMLFormElement);
    }
  }

  private async ackFlag(flagId: string, button: HTMLElement): Promise<void> {
    // optimistic: mark acknowledged immediately, reconcile on next poll
    const item = button.closest("li");
    button.replaceWith(Object.assign(document.createElement("span"), {
      className: "acked",
      textContent: "acknowledged",
    }));
    try {
      await this.api.ackFlag(flagId);
    } catch {
      if (item) item.classList.add("ack-failed");
      await this.render();
    }
  }

  private async savePatient(form: HTMLFormElement): Promise<void> {
    const patientId = form.dataset.patient ?? "";
    const patient = await this.api.getPatient(patientId);
    const updated: Patient = {
      ...patient,
      display_name: (form.elements.namedItem("display_name") as HTMLInputElement).value,
      phone: (form.elements.namedItem("phone") as HTMLInputElement).value,
      timezone: (form.elements.namedItem("timezone") as HTMLInputElement).value,
    };
    try {
      this.clearFieldErrors(form);
      await this.api.updatePatient(patientId, updated);
      await this.render();
    } catch (error) {
      this.showFieldErrors(form, error);
    }
  }

  private async addCall(form: HTMLFormElement): Promise<void> {
    const patientId = form.dataset.patient ?? "";
    const timezone = form.dataset.timezone ?? "UTC";
    const instrumentIds = Array.from(
      form.querySelectorAll<HTMLInputElement>("input[name=instrument]:checked"),
    ).map((el) => el.value);
    const body = buildCallRequest(
      (form.elements.namedItem("scheduled_local") as HTMLInputElement).value,
      timezone,
      instrumentIds,
    );
    if (!body) return;
    try {
      this.clearFieldErrors(form);
      await this.api.createCall(patientId, body);
      await this.render();
    } catch (error) {
      this.showFieldErrors(form, error);
    }
  }

  private clearFieldErrors(form: HTMLFormElement): void {
    form.querySelectorAll(".field-error").forEach((el) => (el.textContent = ""));
  }

  private showFieldErrors(form: HTMLFormElement, error: unknown): void {
    if (!(error instanceof ApiError)) throw error;
    const issues = error.problem.errors ?? [
      { code: error.problem.code, field: error.problem.field ?? "", message: error.problem.message },
    ];
    for (const issue of issues) {
      const leaf = issue.field.split(".").pop() ?? issue.field;
      const slot = form.querySelector(`.field-error[data-field="${leaf}"]`);
      if (slot) slot.textContent = `${issue.code}: ${issue.message}`;
    }
  }
}

export function flagsAfterOptimisticAck(flags: EscalationFlag[], flagId: string): EscalationFlag[] {
  return flags.map((f) => (f.id === flagId ? { ...f, acknowledged: true } : f));
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  new Dashboard(document.getElementById("app") as HTMLElement).start();
}
