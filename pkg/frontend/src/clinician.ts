/**
 * Clinician dashboard controller.
 *
 * A credential (redeemed share token or staff key) must be established
 * before any record fetch. All view data is refetched from the gateway
 * after every mutation; the pane renders whatever the server's record
 * version says, never an optimistic guess.
 */

import { GatewayClient } from "./api";
import {
  AlertView,
  ApiError,
  Credential,
  RecordDocument,
  TimelineEvent,
} from "./types";

export interface ClinicianState {
  credential: Credential | null;
  capability: "read" | "read_write" | null;
  recordId: string | null;
  recordVersion: number;
  record: RecordDocument | null;
  events: TimelineEvent[];
  alerts: AlertView[];
  /** true only for read_write tokens or the clinician key */
  canWrite: boolean;
  error: string | null;
  /** transient user-facing notice, e.g. double-review conflict */
  toast: string | null;
  /** set when a token was rejected and the user must re-enter one */
  needsToken: boolean;
}

export class ClinicianController {
  readonly state: ClinicianState = {
    credential: null,
    capability: null,
    recordId: null,
    recordVersion: 0,
    record: null,
    events: [],
    alerts: [],
    canWrite: false,
    error: null,
    toast: null,
    needsToken: false,
  };

  private listeners: Array<(state: ClinicianState) => void> = [];

  constructor(private readonly client: GatewayClient) {}

  onChange(listener: (state: ClinicianState) => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  /** Redeem a scanned or typed share token, then load the record view. */
  async enterToken(token: string): Promise<boolean> {
    this.state.error = null;
    this.state.toast = null;
    try {
      const redeemed = await this.client.redeemToken(token.trim());
      this.state.credential = { kind: "token", token: token.trim() };
      this.state.capability = redeemed.capability as "read" | "read_write";
      this.state.recordId = redeemed.record_id;
      this.state.canWrite = redeemed.capability === "read_write";
      this.state.needsToken = false;
      await this.refresh();
      return true;
    } catch (error) {
      this.state.credential = null;
      this.state.capability = null;
      this.state.canWrite = false;
      this.state.needsToken = true;
      // expired is surfaced distinctly from a forged/garbled token
      if (error instanceof ApiError && error.detail === "expired") {
        this.state.error = "token expired — please request a fresh share token";
      } else if (error instanceof ApiError && error.detail === "revoked") {
        this.state.error = "token revoked by the patient";
      } else if (error instanceof ApiError && error.detail === "bad_mac") {
        this.state.error = "token not recognized — check for typos or rescan";
      } else {
        this.state.error = error instanceof Error ? error.message : String(error);
      }
      this.notify();
      return false;
    }
  }

  /** Staff credential path: full read_write on the named record. */
  async useClinicianKey(key: string, recordId: string, clinicianId?: string): Promise<boolean> {
    this.state.credential = { kind: "clinician_key", key, clinicianId };
    this.state.recordId = recordId;
    this.state.capability = "read_write";
    this.state.canWrite = true;
    this.state.needsToken = false;
    this.state.error = null;
    try {
      await this.refresh();
      return true;
    } catch (error) {
      this.state.credential = null;
      this.state.canWrite = false;
      this.state.error = error instanceof Error ? error.message : String(error);
      this.notify();
      return false;
    }
  }

  /** Refetch record, timeline and alerts at the server's current version. */
  async refresh(): Promise<void> {
    if (!this.state.credential || !this.state.recordId) {
      throw new Error("no credential established");
    }
    const credential = this.state.credential;
    const recordId = this.state.recordId;
    const record = await this.client.getRecord(recordId, credential);
    const events = await this.client.getEvents(recordId, credential);
    const alerts = await this.client.getAlerts(recordId, credential);
    this.state.record = record.record;
    this.state.recordVersion = record.record_version;
    this.state.events = events.events;
    this.state.alerts = alerts.alerts;
    this.notify();
  }

  private async mutate(action: () => Promise<unknown>): Promise<boolean> {
    if (!this.state.canWrite) {
      this.state.toast = "read-only access: ask the patient for a read-write token";
      this.notify();
      return false;
    }
    this.state.toast = null;
    try {
      await action();
      await this.refresh(); // state always reflects the server record version
      return true;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.state.toast = "already reviewed — reviews are one-time";
      } else if (error instanceof ApiError && error.status === 401) {
        this.state.toast = "not permitted with this credential";
      } else {
        this.state.toast = error instanceof Error ? error.message : String(error);
      }
      await this.refresh().catch(() => undefined);
      this.notify();
      return false;
    }
  }

  verifyField(path: string): Promise<boolean> {
    return this.mutate(() =>
      this.client.verifyField(this.state.recordId!, path, this.state.credential!),
    );
  }

  setAlertStatus(alertId: string, status: string): Promise<boolean> {
    return this.mutate(() =>
      this.client.setAlertStatus(this.state.recordId!, alertId, status, this.state.credential!),
    );
  }

  reviewAlert(alertId: string, accurate: boolean, relevant: boolean): Promise<boolean> {
    const reviewer =
      this.state.credential?.kind === "clinician_key"
        ? this.state.credential.clinicianId ?? "console"
        : "token-holder";
    return this.mutate(() =>
      this.client.reviewAlert(
        this.state.recordId!,
        alertId,
        accurate,
        relevant,
        reviewer,
        this.state.credential!,
      ),
    );
  }
}

/** Rows for the provenance/verified-badge table under the timeline. */
export function provenanceRows(
  record: RecordDocument | null,
): Array<{ path: string; source: string; verified: boolean }> {
  if (!record) return [];
  return Object.entries(record.provenance)
    .map(([path, provenance]) => ({
      path,
      source: provenance.source,
      verified: provenance.verified,
    }))
    .sort((a, b) => a.path.localeCompare(b.path));
}
