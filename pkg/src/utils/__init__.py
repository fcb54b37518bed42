# Utils