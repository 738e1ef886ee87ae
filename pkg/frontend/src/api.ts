// Thin client over the REST API. All dashboard writes go through here.

import type {
  CallSchedule,
  CallSummary,
  EscalationFlag,
  Instrument,
  Patient,
  ProblemDetails,
  Transcript,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly problem: ProblemDetails,
  ) {
    super(problem.message || `API error ${status}`);
  }
}

export interface ApiConfig {
  baseUrl: string;
  token?: string;
}

export class ApiClient {
  constructor(private readonly config: ApiConfig) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.config.token) {
      headers["authorization"] = `Bearer ${this.config.token}`;
    }
    const response = await fetch(`${this.config.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let problem: ProblemDetails;
      try {
        problem = (await response.json()) as ProblemDetails;
      } catch {
        problem = { code: "HttpError", message: `HTTP ${response.status}` };
      }
      throw new ApiError(response.status, problem);
    }
    return (await response.json()) as T;
  }

  listPatients(): Promise<Patient[]> {
    return this.request("GET", "/patients");
  }

  getPatient(id: string): Promise<Patient> {
    return this.request("GET", `/patients/${encodeURIComponent(id)}`);
  }

  updatePatient(id: string, patient: Patient): Promise<Patient> {
    return this.request("PUT", `/patients/${encodeURIComponent(id)}`, patient);
  }

  listCalls(params: { status?: string; patient_id?: string } = {}): Promise<CallSchedule[]> {
    const query = new URLSearchParams();
    if (params.status) query.set("status", params.status);
    if (params.patient_id) query.set("patient_id", params.patient_id);
    const suffix = query.toString() ? `?${query}` : "";
    return this.request("GET", `/calls${suffix}`);
  }

  createCall(
    patientId: string,
    body: { scheduled_at: string; instrument_ids: string[]; max_attempts?: number },
  ): Promise<CallSchedule> {
    return this.request("POST", `/patients/${encodeURIComponent(patientId)}/calls`, body);
  }

  cancelCall(scheduleId: string): Promise<CallSchedule> {
    return this.request("POST", `/calls/${encodeURIComponent(scheduleId)}/cancel`);
  }

  getTranscript(scheduleId: string): Promise<Transcript> {
    return this.request("GET", `/calls/${encodeURIComponent(scheduleId)}/transcript`);
  }

  getSummary(scheduleId: string): Promise<CallSummary> {
    return this.request("GET", `/calls/${encodeURIComponent(scheduleId)}/summary`);
  }

  listFlags(acknowledged?: boolean): Promise<EscalationFlag[]> {
    const suffix = acknowledged === undefined ? "" : `?acknowledged=${acknowledged}`;
    return this.request("GET", `/flags${suffix}`);
  }

  ackFlag(flagId: string): Promise<EscalationFlag> {
    return this.request("POST", `/flags/${encodeURIComponent(flagId)}/ack`);
  }

  listInstruments(): Promise<Instrument[]> {
    return this.request("GET", "/instruments");
  }
}
