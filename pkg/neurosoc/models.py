from __future__ import annotations

from datetime import datetime

from .extensions import db


class ExperimentRun(db.Model):
    __tablename__ = 'experiment_runs'
    __table_args__ = {'sqlite_autoincrement': True}

    id = db.Column(db.Integer, primary_key=True)
    command = db.Column(db.String(32), nullable=False, index=True)
    status = db.Column(db.Enum('running', 'finished', 'failed', name='run_status'), nullable=False, default='running')
    seed = db.Column(db.Integer, nullable=False, default=0)
    params = db.Column(db.JSON)
    summary = db.Column(db.JSON)
    output_path = db.Column(db.String(512))
    error_code = db.Column(db.String(64))
    error_message = db.Column(db.Text)
    started_at = db.Column(db.DateTime, nullable=False, default=datetime.utcnow)
    finished_at = db.Column(db.DateTime)

    metrics = db.relationship('RunMetric', back_populates='run', cascade='all, delete-orphan', order_by='RunMetric.id')


class RunMetric(db.Model):
    __tablename__ = 'run_metrics'
    __table_args__ = (
        db.UniqueConstraint('run_id', 'name', name='uq_run_metric_name'),
        {'sqlite_autoincrement': True},
    )

    id = db.Column(db.Integer, primary_key=True)
    run_id = db.Column(db.Integer, db.ForeignKey('experiment_runs.id'), index=True, nullable=False)
    name = db.Column(db.String(64), nullable=False)
    value = db.Column(db.Float, nullable=False)

    run = db.relationship('ExperimentRun', back_populates='metrics')
