/**
 * Patient chat simulator.
 *
 * Holds only the visible message list; every user action becomes a
 * /sim/inbound round-trip and the replies are appended in server order.
 * No business logic lives client-side.
 */

import { GatewayClient } from "./api";
import { InboundResult } from "./types";

export interface ChatMessage {
  direction: "out" | "in"; // out = patient -> system
  text: string;
  at: string;
  kind: "text" | "audio_ref" | "image_ref";
}

export interface ChatState {
  senderRef: string;
  messages: ChatMessage[];
  recordId: string | null;
  recordVersion: number;
  lastShareToken: string | null;
  busy: boolean;
  error: string | null;
}

const TOKEN_PATTERN = /AES1\.[A-Za-z0-9_-]+\.[A-Za-z0-9_-]+/;

export function extractShareToken(text: string): string | null {
  const match = TOKEN_PATTERN.exec(text);
  return match ? match[0] : null;
}

export class ChatController {
  readonly state: ChatState;
  private counter = 0;
  private listeners: Array<(state: ChatState) => void> = [];

  constructor(
    private readonly client: GatewayClient,
    senderRef: string,
    private readonly now: () => string = () => new Date().toISOString().slice(0, 19),
  ) {
    this.state = {
      senderRef,
      messages: [],
      recordId: null,
      recordVersion: 0,
      lastShareToken: null,
      busy: false,
      error: null,
    };
  }

  onChange(listener: (state: ChatState) => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  private nextMessageId(): string {
    this.counter += 1;
    return `${this.state.senderRef}-${Date.now()}-${this.counter}`;
  }

  async sendText(body: string): Promise<InboundResult | null> {
    return this.send({ kind: "text", body });
  }

  /** Fixture voice notes: the gateway's mock transcriber resolves the ref. */
  async sendVoice(mediaRef: string): Promise<InboundResult | null> {
    return this.send({ kind: "audio_ref", media_ref: mediaRef });
  }

  async sendImage(mediaRef: string): Promise<InboundResult | null> {
    return this.send({ kind: "image_ref", media_ref: mediaRef });
  }

  private async send(payload: {
    kind: "text" | "audio_ref" | "image_ref";
    body?: string;
    media_ref?: string;
  }): Promise<InboundResult | null> {
    const at = this.now();
    this.state.busy = true;
    this.state.error = null;
    this.state.messages.push({
      direction: "out",
      text: payload.body ?? `[${payload.kind}: ${payload.media_ref}]`,
      at,
      kind: payload.kind,
    });
    this.notify();
    try {
      const result = await this.client.simInbound({
        message_id: this.nextMessageId(),
        sender_ref: this.state.senderRef,
        channel_timestamp: at,
        ...payload,
      });
      for (const reply of result.replies) {
        this.state.messages.push({
          direction: "in",
          text: reply.text,
          at: reply.created_at,
          kind: "text",
        });
        const token = extractShareToken(reply.text);
        if (token) this.state.lastShareToken = token;
      }
      this.state.recordId = result.record_id;
      this.state.recordVersion = result.record_version;
      return result;
    } catch (error) {
      this.state.error = error instanceof Error ? error.message : String(error);
      return null;
    } finally {
      this.state.busy = false;
      this.notify();
    }
  }
}
