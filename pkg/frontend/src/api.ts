/**
 * Typed client over the gateway HTTP API.
 *
 * Every mutation and every read goes through here; the console keeps no
 * authoritative state of its own, so refetching after a reload reproduces
 * the identical view for the same record version.
 */

import {
  AlertView,
  ApiError,
  Credential,
  InboundResult,
  RecordResponse,
  RedeemResult,
  TimelineEvent,
} from "./types";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private credentialHeaders(credential: Credential): Record<string, string> {
    if (credential.kind === "clinician_key") {
      const headers: Record<string, string> = { "X-Clinician-Key": credential.key };
      if (credential.clinicianId) headers["X-Clinician-Id"] = credential.clinicianId;
      return headers;
    }
    return { Authorization: `Bearer ${credential.token}` };
  }

  private async request<T>(
    method: string,
    path: string,
    options: { credential?: Credential; body?: unknown } = {},
  ): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (options.credential) Object.assign(headers, this.credentialHeaders(options.credential));
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: options.body === undefined ? undefined : JSON.stringify(options.body),
    });
    if (!response.ok) {
      let detail = `http_${response.status}`;
      try {
        const parsed = (await response.json()) as { detail?: string };
        if (parsed.detail) detail = parsed.detail;
      } catch {
        // keep the generic detail
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  /** Patient-simulator channel: one inbound message, synchronous replies. */
  simInbound(message: {
    message_id: string;
    sender_ref: string;
    kind?: string;
    body?: string;
    media_ref?: string;
    channel_timestamp?: string;
  }): Promise<InboundResult> {
    return this.request("POST", "/sim/inbound", { body: message });
  }

  redeemToken(token: string): Promise<RedeemResult> {
    return this.request("POST", "/console/redeem", { body: { token } });
  }

  getRecord(recordId: string, credential: Credential): Promise<RecordResponse> {
    return this.request("GET", `/console/records/${recordId}`, { credential });
  }

  getEvents(
    recordId: string,
    credential: Credential,
  ): Promise<{ events: TimelineEvent[]; record_version: number }> {
    return this.request("GET", `/console/records/${recordId}/events`, { credential });
  }

  getAlerts(
    recordId: string,
    credential: Credential,
  ): Promise<{ alerts: AlertView[]; record_version: number }> {
    return this.request("GET", `/console/records/${recordId}/alerts`, { credential });
  }

  verifyField(
    recordId: string,
    path: string,
    credential: Credential,
  ): Promise<{ ok: boolean; record_version: number }> {
    return this.request("POST", `/console/records/${recordId}/verify`, {
      credential,
      body: { path },
    });
  }

  setAlertStatus(
    recordId: string,
    alertId: string,
    status: string,
    credential: Credential,
  ): Promise<{ ok: boolean; record_version: number }> {
    return this.request("POST", `/console/records/${recordId}/alerts/${alertId}/status`, {
      credential,
      body: { status },
    });
  }

  reviewAlert(
    recordId: string,
    alertId: string,
    accurate: boolean,
    relevant: boolean,
    reviewer: string,
    credential: Credential,
  ): Promise<{ ok: boolean; record_version: number }> {
    return this.request("POST", `/console/records/${recordId}/alerts/${alertId}/review`, {
      credential,
      body: { accurate, relevant, reviewer },
    });
  }
}
