// Validate-before-send state machine for image uploads.
//
// Every server response and every transport failure maps to exactly one
// state, and the send action is enabled only in `accepted`. Validation is
// fail-closed on the client too: if the gateway cannot be reached, the flow
// lands in `error`, never in a sendable state. Stale responses from a
// superseded file selection are discarded via a sequence number.

import type { UploadResponse, ValidateResponse } from './types.js';

export type FlowState =
  | 'idle'
  | 'previewing'
  | 'validating'
  | 'accepted'
  | 'blocked'
  | 'error';

export interface FileLike {
  name: string;
  type: string;
  size: number;
}

export interface FlowSnapshot {
  state: FlowState;
  fileName: string | null;
  confidence: number | null;
  reason: string | null;
  permitToken: string | null;
  message: string | null;
}

export interface UploadRejection {
  status: number;
}

export const MAX_UPLOAD_BYTES = 10 * 1024 * 1024;

type Validator<F extends FileLike> = (file: F) => Promise<ValidateResponse>;
type Uploader<F extends FileLike> = (
  file: F,
  permitToken: string,
  conversationId: string,
) => Promise<UploadResponse>;

export class UploadFlow<F extends FileLike = FileLike> {
  private state: FlowState = 'idle';
  private fileName: string | null = null;
  private confidence: number | null = null;
  private reason: string | null = null;
  private permitToken: string | null = null;
  private message: string | null = null;
  private file: F | null = null;
  private seq = 0;
  private listeners: Array<(snap: FlowSnapshot) => void> = [];

  constructor(
    private readonly validator: Validator<F>,
    private readonly uploader: Uploader<F>,
    private readonly maxBytes: number = MAX_UPLOAD_BYTES,
  ) {}

  onChange(listener: (snap: FlowSnapshot) => void): void {
    this.listeners.push(listener);
  }

  snapshot(): FlowSnapshot {
    return {
      state: this.state,
      fileName: this.fileName,
      confidence: this.confidence,
      reason: this.reason,
      permitToken: this.permitToken,
      message: this.message,
    };
  }

  canSend(): boolean {
    return this.state === 'accepted' && this.permitToken !== null;
  }

  reset(): void {
    this.seq += 1; // orphan any in-flight validation
    this.file = null;
    this.setState('idle', { message: null });
  }

  /** Pick a file: local type/size checks first (no network on failure),
   *  then a validation request to the gateway. */
  async select(file: F): Promise<FlowSnapshot> {
    const mySeq = ++this.seq;
    this.file = file;
    this.fileName = file.name;
    this.permitToken = null;
    this.confidence = null;
    this.reason = null;

    if (!file.type.startsWith('image/')) {
      this.setState('error', { message: 'Only image files can be sent.' });
      return this.snapshot();
    }
    if (file.size > this.maxBytes) {
      this.setState('error', { message: 'Images must be 10 MB or smaller.' });
      return this.snapshot();
    }

    this.setState('validating', { message: 'Checking image authenticity…' });
    let response: ValidateResponse;
    try {
      response = await this.validator(file);
    } catch {
      if (mySeq !== this.seq) return this.snapshot();
      // client-side fail-closed: an unreachable validator blocks sending
      this.setState('error', {
        message: 'Could not validate the image; sending is disabled.',
      });
      return this.snapshot();
    }
    if (mySeq !== this.seq) return this.snapshot(); // superseded selection
    this.renderDecision(response);
    return this.snapshot();
  }

  /** Map a validation response onto exactly one state. */
  renderDecision(response: ValidateResponse): FlowSnapshot {
    if (
      typeof response !== 'object' ||
      response === null ||
      typeof response.isValid !== 'boolean'
    ) {
      this.setState('error', { message: 'Unexpected response from the server.' });
      return this.snapshot();
    }
    this.confidence = response.confidence ?? null;
    this.reason = response.reason ?? null;
    if (response.isValid && response.permitToken) {
      this.permitToken = response.permitToken;
      this.setState('accepted', { message: 'Image verified. Ready to send.' });
    } else if (response.reason === 'model_unavailable') {
      this.setState('blocked', {
        message: 'Verification service unavailable; sending is disabled.',
      });
    } else {
      const conf =
        response.confidence != null
          ? ` (confidence ${response.confidence.toFixed(2)})`
          : '';
      this.setState('blocked', {
        message: `This image was blocked${conf}. Try a photo taken with your camera.`,
      });
    }
    return this.snapshot();
  }

  /** Upload the accepted file; a rejected permit resets to previewing so the
   *  user can revalidate. */
  async send(conversationId: string): Promise<FlowSnapshot> {
    if (!this.canSend() || this.file === null || this.permitToken === null) {
      return this.snapshot();
    }
    try {
      await this.uploader(this.file, this.permitToken, conversationId);
    } catch (err) {
      const status = (err as Partial<UploadRejection>).status;
      if (status === 403) {
        this.permitToken = null;
        this.setState('previewing', {
          message: 'Your approval expired. Please validate the image again.',
        });
      } else {
        this.setState('error', { message: 'Upload failed; please retry.' });
      }
      return this.snapshot();
    }
    this.file = null;
    this.permitToken = null;
    this.setState('idle', { message: 'Sent.' });
    return this.snapshot();
  }

  /** Re-run validation from previewing (after an expired permit). */
  async revalidate(): Promise<FlowSnapshot> {
    if (this.file === null) return this.snapshot();
    return this.select(this.file);
  }

  private setState(state: FlowState, extra: { message: string | null }): void {
    this.state = state;
    this.message = extra.message;
    if (state === 'idle' || state === 'error' || state === 'blocked') {
      this.permitToken = null; // only accepted (and previewing-for-retry) keep state
    }
    const snap = this.snapshot();
    for (const listener of this.listeners) listener(snap);
  }
}
