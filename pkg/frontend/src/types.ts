/** Wire types for the gateway console API. */

export interface OutboundReply {
  created_at: string;
  recipient_ref: string;
  reply_to: string | null;
  text: string;
}

export interface InboundResult {
  replies: OutboundReply[];
  record_id: string | null;
  record_version: number;
}

export interface FieldProvenance {
  source: string;
  verified: boolean;
  encounter_id: string;
  site_id: string;
  timestamp: string;
  raw_utterance_ref: string | null;
}

export interface RecordDocument {
  record_id: string;
  version: number;
  demographics: Record<string, unknown>;
  obstetric_history: Record<string, unknown>;
  current_pregnancy: Record<string, unknown>;
  family_history: Record<string, unknown>[];
  psychosocial: Record<string, unknown>;
  provenance: Record<string, FieldProvenance>;
}

export interface RecordResponse {
  record: RecordDocument;
  record_version: number;
  capability: string;
}

export interface TimelineEvent {
  event_id: string;
  site_id: string;
  actor: string;
  lclock: number;
  wall_time: string;
  payload: Record<string, unknown> & { kind: string };
}

export interface AlertReview {
  accurate: boolean;
  relevant: boolean;
  reviewer: string;
  timestamp: string;
}

export interface AlertView {
  alert_id: string;
  rule_id: string;
  rule_name: string;
  severity: string | null;
  status: string;
  fired_at: string;
  ga_at_firing: number | null;
  review: AlertReview | null;
  clinician_text: string;
  patient_text: string;
}

export interface RedeemResult {
  record_id: string;
  capability: string;
  expiry: number;
  record_version: number;
}

/** Credential for the clinician pane: a redeemed share token or staff key. */
export type Credential =
  | { kind: "token"; token: string }
  | { kind: "clinician_key"; key: string; clinicianId?: string };

export type RejectionReason = "bad_mac" | "expired" | "revoked" | string;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: RejectionReason,
  ) {
    super(`${status}: ${detail}`);
  }
}
